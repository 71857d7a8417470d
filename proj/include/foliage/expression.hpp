#pragma once

// Charts, the public Expression value type, the expression grammar parser and
// deterministic sampled equality.

#include "foliage/expr.hpp"

#include <cctype>
#include <initializer_list>
#include <random>

namespace foliage {

struct AbbrevDecl {
    std::string name;
    Poly defpoly;  // normalized defining polynomial over the chart coordinates
    AtomPtr atom;
};

/// A coordinate chart: ordered coordinates, declared parameters, derived
/// radial symbols (r with r^2 = defining polynomial, r > 0), opaque functions,
/// a sampling box and excluded loci for numeric checks, and optional
/// per-coordinate periods (cyclic coordinates, used by the lattice).
struct ChartData {
    std::string name;
    std::vector<std::string> coords;
    std::vector<std::string> params;
    std::vector<AbbrevDecl> abbrevs;
    std::vector<std::pair<std::string, std::shared_ptr<const OpaqueDef>>> opaques;
    double box_lo = -2.0, box_hi = 2.0;
    double exclude_radius = 0.0;          // skip sample points with |x| below this
    std::vector<double> periods;          // 0 = non-cyclic; sized like coords when used

    int coord_index(const std::string& s) const {
        for (size_t i = 0; i < coords.size(); ++i)
            if (coords[i] == s) return static_cast<int>(i);
        return -1;
    }
    const AbbrevDecl* find_abbrev(const std::string& s) const {
        for (const auto& a : abbrevs)
            if (a.name == s) return &a;
        return nullptr;
    }
    bool has_param(const std::string& s) const {
        for (const auto& p : params)
            if (p == s) return true;
        return false;
    }
    AbbrevHook hook() const {
        AbbrevHook h;
        for (const auto& a : abbrevs) h.roots.push_back({a.defpoly, a.atom});
        return h;
    }
    double period_of(int i) const {
        if (periods.empty() || i < 0 || i >= static_cast<int>(periods.size())) return 0.0;
        return periods[i];
    }
};

using Chart = std::shared_ptr<const ChartData>;

class Expression;
Expression parse_expr(const std::string& text, const Chart& chart);

class ChartBuilder {
public:
    ChartBuilder(std::string name, std::vector<std::string> coords) {
        data_.name = std::move(name);
        data_.coords = std::move(coords);
        if (data_.coords.empty()) throw Error("chart needs at least one coordinate");
        for (size_t i = 0; i < data_.coords.size(); ++i)
            for (size_t j = i + 1; j < data_.coords.size(); ++j)
                if (data_.coords[i] == data_.coords[j]) throw Error("duplicate coordinate name");
    }
    ChartBuilder& param(const std::string& name) {
        data_.params.push_back(name);
        return *this;
    }
    /// Declare a derived radial symbol: name^2 = defining polynomial, name > 0.
    ChartBuilder& abbrev(const std::string& name, const std::string& defpoly_text);
    ChartBuilder& box(double lo, double hi) {
        data_.box_lo = lo;
        data_.box_hi = hi;
        return *this;
    }
    ChartBuilder& exclude_radius(double r) {
        data_.exclude_radius = r;
        return *this;
    }
    ChartBuilder& period(const std::string& coord, double p) {
        if (data_.periods.empty()) data_.periods.assign(data_.coords.size(), 0.0);
        int i = data_.coord_index(coord);
        if (i < 0) throw Error("period for unknown coordinate " + coord);
        data_.periods[i] = p;
        return *this;
    }
    ChartBuilder& opaque(const std::string& name, int arity, const std::vector<std::string>& partials);
    Chart build() { return std::make_shared<const ChartData>(data_); }

private:
    ChartData data_;
};

/// Immutable symbolic expression bound to a chart.  All operations canonicalize.
class Expression {
public:
    Expression() : q_(quot_zero()) {}
    Expression(const Chart& chart, Quot q) : chart_(chart), q_(std::move(q)) {}

    static Expression constant(const Chart& c, const Rational& r) { return Expression(c, quot_const(r)); }
    static Expression constant(const Chart& c, long long n) { return Expression(c, quot_const(Rational(n))); }
    static Expression coord(const Chart& c, const std::string& name) {
        int i = c->coord_index(name);
        if (i < 0) throw Error("unknown coordinate: " + name);
        Atom a;
        a.kind = Atom::Kind::Coord;
        a.idx = i;
        return Expression(c, quot_from_atom(std::make_shared<Atom>(std::move(a))));
    }
    static Expression param(const Chart& c, const std::string& name) {
        if (!c->has_param(name)) throw Error("unknown parameter: " + name);
        Atom a;
        a.kind = Atom::Kind::Param;
        a.name = name;
        return Expression(c, quot_from_atom(std::make_shared<Atom>(std::move(a))));
    }
    static Expression abbrev(const Chart& c, const std::string& name) {
        const AbbrevDecl* d = c->find_abbrev(name);
        if (!d) throw Error("unknown derived symbol: " + name);
        return Expression(c, quot_from_atom(d->atom));
    }
    static Expression pi(const Chart& c) { return Expression(c, quot_pi()); }

    const Chart& chart() const { return chart_; }
    const Quot& raw() const { return q_; }
    bool is_zero() const { return quot_is_zero(q_); }
    bool is_constant() const { return quot_is_const(q_); }
    Rational constant_value() const {
        if (!is_constant()) throw Error("expression is not constant");
        return quot_get_const(q_);
    }

    friend Expression operator+(const Expression& a, const Expression& b) {
        a.check(b);
        return Expression(a.chart_ ? a.chart_ : b.chart_, quot_add(a.q_, b.q_));
    }
    friend Expression operator-(const Expression& a, const Expression& b) {
        a.check(b);
        return Expression(a.chart_ ? a.chart_ : b.chart_, quot_sub(a.q_, b.q_));
    }
    friend Expression operator*(const Expression& a, const Expression& b) {
        a.check(b);
        return Expression(a.chart_ ? a.chart_ : b.chart_, quot_mul(a.q_, b.q_));
    }
    friend Expression operator/(const Expression& a, const Expression& b) {
        a.check(b);
        return Expression(a.chart_ ? a.chart_ : b.chart_, quot_div(a.q_, b.q_));
    }
    Expression operator-() const { return Expression(chart_, quot_neg(q_)); }
    Expression& operator+=(const Expression& o) { return *this = *this + o; }
    Expression& operator-=(const Expression& o) { return *this = *this - o; }
    Expression& operator*=(const Expression& o) { return *this = *this * o; }

    friend Expression operator*(const Rational& r, const Expression& e) {
        return Expression(e.chart_, quot_mul(quot_const(r), e.q_));
    }
    friend Expression operator*(long long n, const Expression& e) { return Rational(n) * e; }

    Expression pow(const Rational& e) const {
        AbbrevHook h = chart_ ? chart_->hook() : AbbrevHook{};
        return Expression(chart_, quot_pow(q_, e, &h));
    }
    Expression pow(long long e) const { return pow(Rational(e)); }

    Expression diff(const std::string& coord) const {
        if (!chart_) throw Error("cannot differentiate an unbound expression");
        int i = chart_->coord_index(coord);
        if (i < 0) throw Error("differentiation coordinate does not belong to the chart: " + coord);
        return Expression(chart_, quot_diff(q_, i));
    }
    Expression diff(int coord_index) const { return Expression(chart_, quot_diff(q_, coord_index)); }

    double eval(const std::map<std::string, double>& point,
                const std::map<std::string, double>& params = {}) const {
        if (!chart_) return quot_eval(q_, EvalEnv{});
        std::vector<double> xs(chart_->coords.size());
        for (size_t i = 0; i < xs.size(); ++i) {
            auto it = point.find(chart_->coords[i]);
            if (it == point.end()) throw Error("evaluation point does not assign coordinate " + chart_->coords[i]);
            xs[i] = it->second;
        }
        EvalEnv env{&xs, &params};
        return quot_eval(q_, env);
    }
    double eval_vec(const std::vector<double>& xs,
                    const std::map<std::string, double>* params = nullptr) const {
        EvalEnv env{&xs, params};
        return quot_eval(q_, env);
    }

    /// Capture-free substitution of coordinates by expressions on a target chart.
    Expression substitute(const std::map<std::string, Expression>& map, const Chart& target) const {
        if (!chart_) throw Error("cannot substitute into an unbound expression");
        std::vector<Quot> images;
        images.reserve(chart_->coords.size());
        for (const auto& c : chart_->coords) {
            auto it = map.find(c);
            if (it == map.end()) throw Error("substitution map does not cover coordinate " + c);
            images.push_back(it->second.raw());
        }
        AbbrevHook h = target->hook();
        return Expression(target, quot_subst_coords(q_, images, &h));
    }

    std::string str() const {
        static const std::vector<std::string> none;
        return quot_str(q_, chart_ ? chart_->coords : none);
    }

    bool has_transcendental() const { return quot_has_transcendental(q_); }

    friend bool equal_canonical(const Expression& a, const Expression& b) {
        a.check(b);
        return quot_is_zero(quot_sub(a.q_, b.q_));
    }

private:
    void check(const Expression& o) const {
        if (chart_ && o.chart_ && chart_.get() != o.chart_.get())
            throw Error("expressions live on different charts: " + chart_->name + " vs " + o.chart_->name);
    }

    Chart chart_;
    Quot q_;
};

inline Expression sin(const Expression& e) { return Expression(e.chart(), quot_fn(Fn::sin, e.raw())); }
inline Expression cos(const Expression& e) { return Expression(e.chart(), quot_fn(Fn::cos, e.raw())); }
inline Expression atan(const Expression& e) { return Expression(e.chart(), quot_fn(Fn::atan, e.raw())); }
inline Expression exp(const Expression& e) { return Expression(e.chart(), quot_fn(Fn::exp, e.raw())); }
inline Expression sqrt(const Expression& e) {
    AbbrevHook h = e.chart() ? e.chart()->hook() : AbbrevHook{};
    return Expression(e.chart(), quot_sqrt(e.raw(), &h));
}

inline Expression piecewise(const Expression& guard,
                            const std::vector<std::tuple<double, double, Expression>>& pieces) {
    Atom a;
    a.kind = Atom::Kind::Piecewise;
    a.guard = guard.raw();
    for (const auto& [lo, hi, v] : pieces) a.pieces.push_back(Piece{lo, hi, v.raw()});
    return Expression(guard.chart(), quot_from_atom(std::make_shared<Atom>(std::move(a))));
}

inline Expression opaque_call(const Chart& c, const std::string& name, const std::vector<Expression>& args) {
    for (const auto& [n, def] : c->opaques) {
        if (n != name) continue;
        if (static_cast<int>(args.size()) != def->arity)
            throw Error("opaque function " + name + " expects " + std::to_string(def->arity) + " arguments");
        Atom a;
        a.kind = Atom::Kind::Opaque;
        a.name = name;
        a.odef = def;
        for (const auto& e : args) a.args.push_back(e.raw());
        return Expression(c, quot_from_atom(std::make_shared<Atom>(std::move(a))));
    }
    throw Error("unknown function: " + name);
}

// ---------------------------------------------------------------------------
// parser (grammar is fixed):
//   expr  := term (('+'|'-') term)*
//   term  := unary (('*'|'/') unary)*
//   unary := '-' unary | power
//   power := atom ('^' unary)?          (right associative)
//   atom  := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
// Numbers: decimal or 'p/q' rationals.  Identifiers: [A-Za-z_][A-Za-z0-9_]*.
// ---------------------------------------------------------------------------

namespace parsing {

struct Parser {
    const std::string& s;
    size_t pos = 0;
    const Chart& chart;

    Parser(const std::string& text, const Chart& c) : s(text), chart(c) {}

    [[noreturn]] void fail(const std::string& msg) {
        throw Error("syntax error at position " + std::to_string(pos) + ": " + msg);
    }
    void skip() {
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }
    bool peek(char c) {
        skip();
        return pos < s.size() && s[pos] == c;
    }
    bool eat(char c) {
        if (peek(c)) { ++pos; return true; }
        return false;
    }

    Expression parse() {
        Expression e = expr();
        skip();
        if (pos != s.size()) fail("unexpected trailing input");
        return e;
    }

    Expression expr() {
        Expression e = term();
        for (;;) {
            if (eat('+')) e = e + term();
            else if (eat('-')) e = e - term();
            else return e;
        }
    }
    Expression term() {
        Expression e = unary();
        for (;;) {
            if (eat('*')) e = e * unary();
            else if (eat('/')) e = e / unary();
            else return e;
        }
    }
    Expression unary() {
        if (eat('-')) return -unary();
        return power();
    }
    Expression power() {
        Expression base = atom();
        if (eat('^')) {
            Expression e = unary();
            if (!e.is_constant()) fail("exponent must be a rational constant");
            return base.pow(e.constant_value());
        }
        return base;
    }
    Expression atom() {
        skip();
        if (pos >= s.size()) fail("unexpected end of input");
        char c = s[pos];
        if (c == '(') {
            ++pos;
            Expression e = expr();
            if (!eat(')')) fail("expected ')'");
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return ident();
        fail(std::string("unexpected character '") + c + "'");
    }
    Expression number() {
        size_t start = pos;
        while (pos < s.size() && (std::isdigit(static_cast<unsigned char>(s[pos])) || s[pos] == '.')) ++pos;
        std::string tok = s.substr(start, pos - start);
        size_t dot = tok.find('.');
        if (tok.find('.', dot + 1) != std::string::npos) fail("malformed number " + tok);
        if (dot == std::string::npos) {
            try {
                return Expression::constant(chart, Rational(std::stoll(tok)));
            } catch (const std::exception&) { fail("integer literal out of range: " + tok); }
        }
        std::string ip = tok.substr(0, dot), fp = tok.substr(dot + 1);
        if (ip.empty()) ip = "0";
        std::int64_t den = 1;
        for (size_t i = 0; i < fp.size(); ++i) {
            if (den > INT64_MAX / 10) fail("decimal literal too long: " + tok);
            den *= 10;
        }
        try {
            std::int64_t whole = std::stoll(ip);
            std::int64_t frac = fp.empty() ? 0 : std::stoll(fp);
            return Expression::constant(chart, Rational(whole) + Rational(frac, den));
        } catch (const std::exception&) { fail("decimal literal out of range: " + tok); }
    }
    Expression ident() {
        size_t start = pos;
        while (pos < s.size() &&
               (std::isalnum(static_cast<unsigned char>(s[pos])) || s[pos] == '_')) ++pos;
        std::string name = s.substr(start, pos - start);
        if (peek('(')) {
            ++pos;
            std::vector<Expression> args;
            args.push_back(expr());
            while (eat(',')) args.push_back(expr());
            if (!eat(')')) fail("expected ')' after arguments of " + name);
            return call(name, args);
        }
        if (int i = chart->coord_index(name); i >= 0) return Expression::coord(chart, name);
        if (chart->find_abbrev(name)) return Expression::abbrev(chart, name);
        if (chart->has_param(name)) return Expression::param(chart, name);
        if (name == "pi") return Expression::pi(chart);
        fail("unknown symbol: " + name);
    }
    Expression call(const std::string& name, std::vector<Expression>& args) {
        auto need1 = [&] {
            if (args.size() != 1) fail(name + " expects one argument");
        };
        if (name == "sin") { need1(); return foliage::sin(args[0]); }
        if (name == "cos") { need1(); return foliage::cos(args[0]); }
        if (name == "atan") { need1(); return foliage::atan(args[0]); }
        if (name == "exp") { need1(); return foliage::exp(args[0]); }
        if (name == "sqrt") { need1(); return foliage::sqrt(args[0]); }
        if (name == "piecewise") {
            if (args.size() < 4 || (args.size() - 1) % 3 != 0)
                fail("piecewise expects guard followed by (lo,hi,value) triples");
            std::vector<std::tuple<double, double, Expression>> pieces;
            for (size_t i = 1; i + 3 <= args.size(); i += 3) {
                if (!args[i].is_constant() || !args[i + 1].is_constant())
                    fail("piecewise guard bounds must be numeric");
                pieces.push_back({args[i].constant_value().to_double(),
                                  args[i + 1].constant_value().to_double(), args[i + 2]});
            }
            return piecewise(args[0], pieces);
        }
        return opaque_call(chart, name, args);
    }
};

} // namespace parsing

inline Expression parse_expr(const std::string& text, const Chart& chart) {
    parsing::Parser p(text, chart);
    return p.parse();
}

inline ChartBuilder& ChartBuilder::abbrev(const std::string& name, const std::string& defpoly_text) {
    Chart tmp = std::make_shared<const ChartData>(data_);
    Expression def = parse_expr(defpoly_text, tmp);
    if (!def.raw().den.empty()) throw Error("derived symbol definition must be polynomial");
    auto [scale, base] = poly_base_normalize(def.raw().num);
    if (!(scale == Rational(1)))
        throw Error("derived symbol definition must have integer content 1: " + defpoly_text);
    Atom a;
    a.kind = Atom::Kind::Abbrev;
    a.name = name;
    a.defpoly = base;
    AbbrevDecl decl{name, base, std::make_shared<Atom>(std::move(a))};
    data_.abbrevs.push_back(std::move(decl));
    return *this;
}

inline ChartBuilder& ChartBuilder::opaque(const std::string& name, int arity,
                                          const std::vector<std::string>& partials) {
    if (static_cast<int>(partials.size()) != arity)
        throw Error("opaque function needs one partial derivative per argument");
    // partial templates live over placeholder coordinates a1..aN
    std::vector<std::string> ph;
    for (int i = 0; i < arity; ++i) ph.push_back("a" + std::to_string(i + 1));
    Chart tchart = std::make_shared<const ChartData>(ChartData{"_template", ph, {}, {}, {}, -2, 2, 0, {}});
    auto def = std::make_shared<OpaqueDef>();
    def->name = name;
    def->arity = arity;
    for (const auto& p : partials) def->partials.push_back(parse_expr(p, tchart).raw());
    data_.opaques.push_back({name, def});
    return *this;
}

// ---------------------------------------------------------------------------
// sampled equality
// ---------------------------------------------------------------------------

inline double halton(int index, int base) {
    double f = 1.0, r = 0.0;
    while (index > 0) {
        f /= base;
        r += f * (index % base);
        index /= base;
    }
    return r;
}

/// Deterministic low-discrepancy sample points inside the chart box, skipping
/// declared excluded loci.
inline std::vector<std::vector<double>> sample_points(const Chart& chart, int count, int seed = 1) {
    static const int primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29};
    size_t n = chart->coords.size();
    if (n > 10) throw Error("sampling supports at most 10 coordinates");
    std::vector<std::vector<double>> pts;
    int index = 1 + seed * 64;
    int guard = 0;
    while (static_cast<int>(pts.size()) < count && guard++ < 100000) {
        std::vector<double> x(n);
        double norm2 = 0;
        for (size_t i = 0; i < n; ++i) {
            double u = halton(index, primes[i]);
            x[i] = chart->box_lo + (chart->box_hi - chart->box_lo) * u;
            norm2 += x[i] * x[i];
        }
        ++index;
        if (chart->exclude_radius > 0 && std::sqrt(norm2) < chart->exclude_radius) continue;
        pts.push_back(std::move(x));
    }
    return pts;
}

struct SampledResult {
    bool equal = false;
    bool inconclusive = false;
    int points_used = 0;
    std::vector<double> witness;  // first failing point, if any
    double worst = 0.0;
};

inline SampledResult equal_sampled(const Expression& a, const Expression& b, int points = 32,
                                   double tol = 1e-9, int seed = 1,
                                   const std::map<std::string, double>& params = {}) {
    SampledResult res;
    auto pts = sample_points(a.chart() ? a.chart() : b.chart(), points, seed);
    for (const auto& p : pts) {
        double va, vb;
        try {
            va = a.eval_vec(p, &params);
            vb = b.eval_vec(p, &params);
        } catch (const Error&) {
            continue;  // singular locus, skip
        }
        ++res.points_used;
        double scale = 1.0 + std::max(std::abs(va), std::abs(vb));
        double diff = std::abs(va - vb) / scale;
        if (diff > res.worst) res.worst = diff;
        if (diff > tol) {
            res.equal = false;
            res.witness = p;
            return res;
        }
    }
    if (res.points_used == 0) {
        res.inconclusive = true;
        return res;
    }
    res.equal = true;
    return res;
}

/// Canonical equality with automatic sampled fallback for transcendental parts.
inline bool expr_equal(const Expression& a, const Expression& b, double tol = 1e-9) {
    Expression d = a - b;
    if (d.is_zero()) return true;
    if (d.has_transcendental()) {
        auto r = equal_sampled(a, b, 32, tol);
        return r.equal && !r.inconclusive;
    }
    return false;
}

inline bool expr_is_zero(const Expression& e, double tol = 1e-9) {
    if (e.is_zero()) return true;
    if (e.has_transcendental()) {
        Expression zero = Expression::constant(e.chart(), 0);
        auto r = equal_sampled(e, zero, 32, tol);
        return r.equal && !r.inconclusive;
    }
    return false;
}

} // namespace foliage
