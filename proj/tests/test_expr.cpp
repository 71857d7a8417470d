#include <catch2/catch_amalgamated.hpp>

#include "foliage/expression.hpp"

#include <cmath>
#include <random>

using namespace foliage;

namespace {

Chart r3() {
    return ChartBuilder("R3", {"x", "y", "z"}).abbrev("r", "x^2+y^2+z^2").exclude_radius(0.15).build();
}

Chart r1() {
    return ChartBuilder("line", {"r"}).build();
}

double fd(const Expression& e, const std::map<std::string, double>& pt, const std::string& var,
          double h = 1e-5) {
    auto p = pt, m = pt;
    p[var] += h;
    m[var] -= h;
    return (e.eval(p) - e.eval(m)) / (2 * h);
}

}  // namespace

TEST_CASE("parser handles the documented grammar") {
    auto c = r3();
    CHECK(parse_expr("x^2+y^2+z^2", c).str() == "x^2 + y^2 + z^2");
    CHECK(parse_expr("x - - y", c).str() == "x + y");
    CHECK_THROWS_AS(parse_expr("x +", c), Error);
    CHECK_THROWS_AS(parse_expr("q + 1", c), Error);
    CHECK_THROWS_AS(parse_expr("foo(x)", c), Error);
    // right-associative power
    auto e = parse_expr("x^3^2", c);  // x^(3^2)
    CHECK(equal_canonical(e, parse_expr("x^9", c)));
    // rationals both as literal and as division
    CHECK(equal_canonical(parse_expr("1/3*x", c), parse_expr("x/3", c)));
    CHECK(equal_canonical(parse_expr("0.5*x", c), parse_expr("x/2", c)));
}

TEST_CASE("three-sphere flux density parses and evaluates") {
    auto c = r3();
    auto h = parse_expr("16/((x^2+y^2+z^2+1)^3)", c);
    CHECK(h.eval({{"x", 0}, {"y", 0}, {"z", 0}}) == Catch::Approx(16.0));
    CHECK(h.eval({{"x", 1}, {"y", 0}, {"z", 0}}) == Catch::Approx(2.0));
    auto g = parse_expr("atan(sqrt(x^2+y^2+z^2))", c);
    CHECK(g.eval({{"x", 1}, {"y", 2}, {"z", 2}}) == Catch::Approx(std::atan(3.0)));
}

TEST_CASE("canonicalization collects and cancels") {
    auto c = r3();
    CHECK(equal_canonical(parse_expr("x+y", c), parse_expr("y+x", c)));
    CHECK(parse_expr("x*y - y*x", c).is_zero());
    CHECK(equal_canonical(parse_expr("(x+y)^2", c), parse_expr("x^2+2*x*y+y^2", c)));
    // quotient cancellation needs exact polynomial division
    CHECK(equal_canonical(parse_expr("x/(1+x) + 1/(1+x)", c), parse_expr("1", c)));
    CHECK(equal_canonical(parse_expr("(x^2-y^2)/(x-y)", c), parse_expr("x+y", c)));
    // gcd-reduced rational powers
    CHECK(equal_canonical(parse_expr("x^4/x^2", c), parse_expr("x^2", c)));
}

TEST_CASE("derived radial symbol rewrites even powers") {
    auto c = r3();
    auto r = Expression::abbrev(c, "r");
    CHECK(equal_canonical(r * r, parse_expr("x^2+y^2+z^2", c)));
    CHECK(equal_canonical(r.pow(4), parse_expr("(x^2+y^2+z^2)^2", c)));
    // odd powers keep one radical factor
    auto e = r.pow(3);
    CHECK(equal_canonical(e, r * parse_expr("x^2+y^2+z^2", c)));
    // chain rule: dr/dx = x/r
    auto drdx = r.diff("x");
    CHECK(equal_canonical(drdx * r, Expression::coord(c, "x")));
    // sqrt of the defining polynomial resolves to the symbol
    CHECK(equal_canonical(parse_expr("sqrt(x^2+y^2+z^2)", c), r));
}

TEST_CASE("differentiation matches finite differences at a generic point") {
    auto c = r3();
    std::map<std::string, double> pt{{"x", 0.7}, {"y", -0.4}, {"z", 1.2}};
    const char* cases[] = {
        "x^2*y + z", "sin(x*y)+cos(z)", "atan(x/(1+z^2))", "exp(x*y*z)/2",
        "sqrt(x^2+y^2+z^2)", "16/((x^2+y^2+z^2+1)^3)", "atan(r)*x/r",
    };
    for (const char* text : cases) {
        auto e = parse_expr(text, c);
        for (const char* v : {"x", "y", "z"}) {
            double sym = e.diff(v).eval(pt);
            double num = fd(e, pt, v);
            INFO(text << " d/d" << v);
            CHECK(sym == Catch::Approx(num).margin(1e-6 * (1 + std::abs(num))));
        }
    }
}

TEST_CASE("derivative of atan(r)/r^3 verified by finite differences at r=0.7") {
    auto c = r1();
    auto e = parse_expr("atan(r)/r^3", c);
    auto d = e.diff("r");
    std::map<std::string, double> pt{{"r", 0.7}};
    CHECK(d.eval(pt) == Catch::Approx(fd(e, pt, "r", 1e-5)).epsilon(1e-6));
}

TEST_CASE("invariant primitive density satisfies its defining ODE") {
    // h(r) = (r^2-1)/(r^2 (r^2+1)^2) + atan(r)/r^3 obeys 2 r h' + 6 h = 16/(r^2+1)^3
    auto c = r1();
    auto h = parse_expr("(r^2-1)/(r^2*(r^2+1)^2) + atan(r)/r^3", c);
    auto lhs = Rational(2) * Expression::coord(c, "r") * h.diff("r") + Rational(6) * h;
    auto rhs = parse_expr("16/((r^2+1)^3)", c);
    CHECK(equal_canonical(lhs, rhs));
}

TEST_CASE("primitive density is finite at the origin with value 8/3") {
    auto c = r1();
    auto h = parse_expr("(r^2-1)/(r^2*(r^2+1)^2) + atan(r)/r^3", c);
    // independent oracle: series h = 8/3 - (24/5) r^2 + (48/7) r^4 + O(r^6)
    auto series = [](double r) { return 8.0 / 3 - 24.0 / 5 * r * r + 48.0 / 7 * std::pow(r, 4); };
    for (double r : {5e-4, 1e-3, 0.05, 0.2}) {
        INFO("r = " << r);
        CHECK(h.eval({{"r", r}}) == Catch::Approx(series(r)).margin(1e-6 + 40 * std::pow(r, 6)));
    }
    CHECK(std::abs(h.eval({{"r", 5e-4}}) - 8.0 / 3) < 1e-6);
    // eval at r = 1: first term vanishes, atan(1) = pi/4
    CHECK(h.eval({{"r", 1}}) == Catch::Approx(M_PI / 4).epsilon(1e-12));
}

TEST_CASE("substitution is capture free and canonicalizes") {
    auto cN = r3();
    auto cS = ChartBuilder("S", {"xbar", "ybar", "zbar"}).abbrev("rbar", "xbar^2+ybar^2+zbar^2").build();
    auto rbar = Expression::abbrev(cS, "rbar");
    std::map<std::string, Expression> inversion{
        {"x", Expression::coord(cS, "xbar") / (rbar * rbar)},
        {"y", Expression::coord(cS, "ybar") / (rbar * rbar)},
        {"z", Expression::coord(cS, "zbar") / (rbar * rbar)},
    };
    auto r2 = parse_expr("x^2+y^2+z^2", cN);
    auto image = r2.substitute(inversion, cS);
    CHECK(equal_canonical(image, parse_expr("1/(xbar^2+ybar^2+zbar^2)", cS)));

    // identity map is the identity
    std::map<std::string, Expression> idm{
        {"x", Expression::coord(cN, "x")}, {"y", Expression::coord(cN, "y")}, {"z", Expression::coord(cN, "z")}};
    auto e = parse_expr("x*atan(r)/(1+z^2)", cN);
    CHECK(equal_canonical(e.substitute(idm, cN), e));
}

TEST_CASE("inversion of the radial profile matches its closed form") {
    // h(1/rbar) = -rbar^6 ( h(rbar) - pi/(2 rbar^3) ), using atan(1/u) = pi/2 - atan(u)
    auto cS = ChartBuilder("S", {"rbar"}).abbrev("rb", "rbar^2").build();  // rbar > 0 via rb = |rbar|
    auto c = ChartBuilder("line", {"r"}).build();
    auto h = parse_expr("(r^2-1)/(r^2*(r^2+1)^2) + atan(r)/r^3", c);
    auto cSr = ChartBuilder("Sr", {"u"}).abbrev("rbar", "u^2").build();
    auto rbar = Expression::abbrev(cSr, "rbar");  // positive symbol with rbar^2 = u^2
    std::map<std::string, Expression> inv{{"r", Expression::constant(cSr, 1) / rbar}};
    auto himg = h.substitute(inv, cSr);
    auto hs = parse_expr("(rbar^2-1)/(rbar^2*(rbar^2+1)^2) + atan(rbar)/rbar^3", cSr);
    auto rhs = -rbar.pow(6) * (hs - Expression::pi(cSr) / (Rational(2) * rbar.pow(3)));
    CHECK(equal_canonical(himg, rhs));
}

TEST_CASE("two divergent terms cancel near the origin (sampled)") {
    auto c = ChartBuilder("line", {"r"}).box(1e-4, 7e-4).build();
    auto h = parse_expr("(r^2-1)/(r^2*(r^2+1)^2) + atan(r)/r^3", c);
    auto val = Expression::constant(c, Rational(8, 3));
    auto res = equal_sampled(h, val, 32, 1e-6);
    CHECK(res.equal);
    CHECK(res.points_used > 0);
}

TEST_CASE("sampled equality reports witnesses and inconclusive cases") {
    auto c = r3();
    auto a = parse_expr("x + 1/100000 * y^2", c);
    auto b = parse_expr("x", c);
    auto res = equal_sampled(a, b, 32, 1e-9);
    CHECK_FALSE(res.equal);
    CHECK(res.witness.size() == 3);
    // all points excluded -> inconclusive
    auto tiny = ChartBuilder("t", {"x"}).box(-0.01, 0.01).exclude_radius(1.0).build();
    auto res2 = equal_sampled(parse_expr("x", tiny), parse_expr("x", tiny));
    CHECK(res2.inconclusive);
}

TEST_CASE("piecewise expressions evaluate region by region") {
    auto c = r1();
    auto r = Expression::coord(c, "r");
    auto bump = piecewise(r, {{0.0, 0.5, Expression::constant(c, 0)},
                              {0.5, 1.0, r * r},
                              {1.0, 1e30, Expression::constant(c, 1)}});
    CHECK(bump.eval({{"r", 0.2}}) == 0.0);
    CHECK(bump.eval({{"r", 0.7}}) == Catch::Approx(0.49));
    CHECK(bump.eval({{"r", 2.0}}) == 1.0);
    CHECK_THROWS_AS(bump.eval({{"r", -1.0}}), Error);
    // derivative acts piece by piece
    auto d = bump.diff("r");
    CHECK(d.eval({{"r", 0.7}}) == Catch::Approx(1.4));
    CHECK(d.eval({{"r", 2.0}}) == 0.0);
}

TEST_CASE("opaque functions carry user-supplied derivatives") {
    auto c = ChartBuilder("line", {"t"}).opaque("sig", 1, {"sig(a1)*(1-sig(a1))"}).build();
    auto e = opaque_call(c, "sig", {parse_expr("t^2", c)});
    auto d = e.diff("t");
    // d/dt sig(t^2) = sig(t^2)(1-sig(t^2)) * 2t
    auto expect = e * (Expression::constant(c, 1) - e) * parse_expr("2*t", c);
    CHECK(equal_canonical(d, expect));
    CHECK_THROWS_AS(e.eval({{"t", 1.0}}), Error);  // no numeric rule
}

TEST_CASE("evaluation errors carry offending context") {
    auto c = r3();
    CHECK(parse_expr("x^2+y^2", c).eval({{"x", 3}, {"y", 4}, {"z", 0}}) == Catch::Approx(25.0));
    CHECK_THROWS_AS(parse_expr("1/x", c).eval({{"x", 0}, {"y", 1}, {"z", 1}}), Error);
    CHECK_THROWS_AS(parse_expr("sqrt(x-y)", c).eval({{"x", 0}, {"y", 1}, {"z", 0}}), Error);
}

TEST_CASE("property: differentiation is linear and mixed partials commute") {
    auto c = r3();
    std::mt19937 rng(7);
    std::uniform_int_distribution<int> coeff(-4, 4);
    auto rand_poly = [&] {
        Expression e = Expression::constant(c, 0);
        const char* monos[] = {"1", "x", "y", "z", "x*y", "y*z", "x^2", "z^2", "x*y*z", "x^2*z"};
        for (const char* m : monos) e += Rational(coeff(rng)) * parse_expr(m, c);
        return e;
    };
    for (int iter = 0; iter < 100; ++iter) {
        auto e1 = rand_poly(), e2 = rand_poly();
        Rational a(coeff(rng)), b(coeff(rng));
        auto lin = (a * e1 + b * e2).diff("x") - (a * e1.diff("x") + b * e2.diff("x"));
        CHECK(lin.is_zero());
        auto mixed = e1.diff("x").diff("y") - e1.diff("y").diff("x");
        CHECK(mixed.is_zero());
    }
    // mixed partials also commute through the fixed function set
    auto e = parse_expr("atan(x*y)*exp(z)+sin(x)*cos(y*z)+sqrt(x^2+y^2+z^2)", c);
    CHECK(equal_canonical(e.diff("x").diff("y"), e.diff("y").diff("x")));
}

TEST_CASE("property: canonical equality implies sampled equality") {
    auto c = r3();
    auto a = parse_expr("(x+y)^3/(x^2+1)", c);
    auto b = parse_expr("(x^3+3*x^2*y+3*x*y^2+y^3)/(1+x^2)", c);
    REQUIRE(equal_canonical(a, b));
    auto res = equal_sampled(a, b, 32, 1e-9);
    CHECK(res.equal);
}

TEST_CASE("property: parse(print(e)) is canonically e") {
    auto c = r3();
    const char* cases[] = {
        "x^2+y^2+z^2",
        "16/((x^2+y^2+z^2+1)^3)",
        "atan(sqrt(x^2+y^2+z^2))",
        "(r^2-1)/(r^2*(r^2+1)^2) + atan(r)/r^3",
        "x*atan(r)/r",
        "-3/2*x*y + z^5 - 1/7",
        "exp(x)*sin(y)*cos(z)/(x^2+y^2+1)",
    };
    for (const char* text : cases) {
        auto e = parse_expr(text, c);
        INFO(text << "  printed as  " << e.str());
        CHECK(equal_canonical(parse_expr(e.str(), c), e));
    }
}
