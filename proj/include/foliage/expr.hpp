#pragma once

// Symbolic expressions over chart coordinates.
//
// Canonical representation: every expression is a quotient N / M where N is a
// multivariate polynomial over "atoms" (coordinates, parameters, pi, derived
// radial symbols, function applications, irreducible sum bases) and M is a
// monomial in those atoms.  Sums and products are flattened and sorted, like
// terms collected, rational coefficients exact, and the quotient is reduced by
// monomial cancellation plus exact polynomial division against the denominator
// bases.  Equality of canonical forms is a decision procedure for equality of
// rational functions in the atoms.

#include "foliage/rational.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace foliage {

enum class Fn : std::uint8_t { sin, cos, atan, exp };

inline const char* fn_name(Fn f) {
    switch (f) {
        case Fn::sin: return "sin";
        case Fn::cos: return "cos";
        case Fn::atan: return "atan";
        case Fn::exp: return "exp";
    }
    return "?";
}

struct Atom;
using AtomPtr = std::shared_ptr<const Atom>;

struct Factor {
    AtomPtr atom;
    Rational exp;
};
using Mono = std::vector<Factor>;  // sorted by atom order, exponents nonzero

struct Term {
    Rational coeff;
    Mono mono;
};
using Poly = std::vector<Term>;  // sorted descending by monomial order, coeffs nonzero

struct Quot {
    Poly num;
    Mono den;  // positive exponents; empty means denominator 1
};

struct OpaqueDef {
    std::string name;
    int arity = 1;
    // Partial derivatives as expressions over placeholder coordinates 0..arity-1.
    std::vector<Quot> partials;
};

struct Piece {
    double lo, hi;  // guard region [lo, hi)
    Quot value;
};

struct Atom {
    enum class Kind : std::uint8_t { Coord, Param, Pi, Abbrev, Fn, SqrtQ, Opaque, Piecewise, PolyBase };
    Kind kind;
    int idx = -1;                 // Coord: coordinate index
    std::string name;             // Param, Abbrev, Opaque
    Poly defpoly;                 // Abbrev: defining polynomial (abbrev^2 == defpoly), stored normalized
    Fn fn = Fn::sin;              // Fn
    std::vector<Quot> args;       // Fn (1), Opaque (arity)
    std::shared_ptr<const OpaqueDef> odef;
    Quot inner;                   // SqrtQ
    Quot guard;                   // Piecewise
    std::vector<Piece> pieces;    // Piecewise
    Poly base;                    // PolyBase
};

// ---- forward declarations -------------------------------------------------
int cmp_atom(const Atom& a, const Atom& b);
int cmp_quot(const Quot& a, const Quot& b);
bool atom_is_positive(const Atom& a);
Poly expand_term(const Rational& c, const Mono& m);
Quot quot_diff(const Quot& q, int coord);
Quot quot_subst_coords(const Quot& q, const std::vector<Quot>& images, const struct AbbrevHook* hook);
std::string quot_str(const Quot& q, const std::vector<std::string>& coords);
std::string atom_str(const Atom& a, const std::vector<std::string>& coords);

// ---------------------------------------------------------------------------
// ordering
// ---------------------------------------------------------------------------

inline int cmp_atomptr(const AtomPtr& a, const AtomPtr& b) {
    if (a.get() == b.get()) return 0;
    return cmp_atom(*a, *b);
}

inline int cmp_mono(const Mono& a, const Mono& b) {
    Rational da(0), db(0);
    for (auto& f : a) da += f.exp;
    for (auto& f : b) db += f.exp;
    if (int c = cmp(da, db)) return c;
    size_t n = std::min(a.size(), b.size());
    for (size_t i = 0; i < n; ++i) {
        if (int c = cmp_atomptr(a[i].atom, b[i].atom)) return -c;  // earlier atom => larger monomial
        if (int c = cmp(a[i].exp, b[i].exp)) return c;
    }
    if (a.size() != b.size()) return a.size() < b.size() ? -1 : 1;
    return 0;
}

inline int cmp_poly(const Poly& a, const Poly& b) {
    size_t n = std::min(a.size(), b.size());
    for (size_t i = 0; i < n; ++i) {
        if (int c = cmp_mono(a[i].mono, b[i].mono)) return c;
        if (int c = cmp(a[i].coeff, b[i].coeff)) return c;
    }
    if (a.size() != b.size()) return a.size() < b.size() ? -1 : 1;
    return 0;
}

inline int cmp_quot(const Quot& a, const Quot& b) {
    if (int c = cmp_poly(a.num, b.num)) return c;
    size_t n = std::min(a.den.size(), b.den.size());
    for (size_t i = 0; i < n; ++i) {
        if (int c = cmp_atomptr(a.den[i].atom, b.den[i].atom)) return c;
        if (int c = cmp(a.den[i].exp, b.den[i].exp)) return c;
    }
    if (a.den.size() != b.den.size()) return a.den.size() < b.den.size() ? -1 : 1;
    return 0;
}

inline int cmp_atom(const Atom& a, const Atom& b) {
    auto ka = static_cast<int>(a.kind), kb = static_cast<int>(b.kind);
    if (ka != kb) return ka < kb ? -1 : 1;
    switch (a.kind) {
        case Atom::Kind::Coord:
            return a.idx == b.idx ? 0 : (a.idx < b.idx ? -1 : 1);
        case Atom::Kind::Param:
        case Atom::Kind::Abbrev: {
            int c = a.name.compare(b.name);
            return c < 0 ? -1 : (c == 0 ? 0 : 1);
        }
        case Atom::Kind::Pi:
            return 0;
        case Atom::Kind::Fn: {
            if (a.fn != b.fn) return static_cast<int>(a.fn) < static_cast<int>(b.fn) ? -1 : 1;
            return cmp_quot(a.args[0], b.args[0]);
        }
        case Atom::Kind::SqrtQ:
            return cmp_quot(a.inner, b.inner);
        case Atom::Kind::Opaque: {
            if (int c = a.name.compare(b.name)) return c < 0 ? -1 : 1;
            if (a.args.size() != b.args.size()) return a.args.size() < b.args.size() ? -1 : 1;
            for (size_t i = 0; i < a.args.size(); ++i)
                if (int c = cmp_quot(a.args[i], b.args[i])) return c;
            return 0;
        }
        case Atom::Kind::Piecewise: {
            if (int c = cmp_quot(a.guard, b.guard)) return c;
            if (a.pieces.size() != b.pieces.size()) return a.pieces.size() < b.pieces.size() ? -1 : 1;
            for (size_t i = 0; i < a.pieces.size(); ++i) {
                if (a.pieces[i].lo != b.pieces[i].lo) return a.pieces[i].lo < b.pieces[i].lo ? -1 : 1;
                if (a.pieces[i].hi != b.pieces[i].hi) return a.pieces[i].hi < b.pieces[i].hi ? -1 : 1;
                if (int c = cmp_quot(a.pieces[i].value, b.pieces[i].value)) return c;
            }
            return 0;
        }
        case Atom::Kind::PolyBase:
            return cmp_poly(a.base, b.base);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// polynomial arithmetic
// ---------------------------------------------------------------------------

inline Poly poly_const(const Rational& c) {
    if (c.is_zero()) return {};
    return {Term{c, {}}};
}

inline Poly poly_add(const Poly& a, const Poly& b) {
    Poly out;
    out.reserve(a.size() + b.size());
    size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        int c = cmp_mono(a[i].mono, b[j].mono);
        if (c > 0) out.push_back(a[i++]);
        else if (c < 0) out.push_back(b[j++]);
        else {
            Rational s = a[i].coeff + b[j].coeff;
            if (!s.is_zero()) out.push_back(Term{s, a[i].mono});
            ++i; ++j;
        }
    }
    while (i < a.size()) out.push_back(a[i++]);
    while (j < b.size()) out.push_back(b[j++]);
    return out;
}

inline Poly poly_neg(Poly p) {
    for (auto& t : p) t.coeff = -t.coeff;
    return p;
}

inline Mono mono_mul_raw(const Mono& a, const Mono& b) {
    Mono out;
    out.reserve(a.size() + b.size());
    size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        int c = cmp_atomptr(a[i].atom, b[j].atom);
        if (c < 0) out.push_back(a[i++]);
        else if (c > 0) out.push_back(b[j++]);
        else {
            Rational e = a[i].exp + b[j].exp;
            if (!e.is_zero()) out.push_back(Factor{a[i].atom, e});
            ++i; ++j;
        }
    }
    while (i < a.size()) out.push_back(a[i++]);
    while (j < b.size()) out.push_back(b[j++]);
    return out;
}

inline Poly poly_mul(const Poly& a, const Poly& b) {
    Poly out;
    for (const auto& ta : a) {
        Poly row;
        for (const auto& tb : b)
            row = poly_add(row, expand_term(ta.coeff * tb.coeff, mono_mul_raw(ta.mono, tb.mono)));
        out = poly_add(out, row);
    }
    return out;
}

inline Poly poly_pow_int(const Poly& p, long long e) {
    Poly out = poly_const(1);
    Poly base = p;
    while (e > 0) {
        if (e & 1) out = poly_mul(out, base);
        e >>= 1;
        if (e) base = poly_mul(base, base);
    }
    return out;
}

/// Normalize a sum base: integer coefficients with content 1, leading sign +.
/// Returns the scale s such that p == s * normalized.
inline std::pair<Rational, Poly> poly_base_normalize(const Poly& p) {
    if (p.empty()) return {Rational(1), p};
    std::int64_t lcm = 1;
    for (const auto& t : p) lcm = std::lcm(lcm, t.coeff.den());
    std::int64_t gcd = 0;
    for (const auto& t : p) gcd = std::gcd(gcd, std::llabs((t.coeff * Rational(lcm)).num()));
    if (gcd == 0) gcd = 1;
    Rational scale(gcd, lcm);
    if (p.front().coeff.is_negative()) scale = -scale;
    Poly out;
    out.reserve(p.size());
    for (const auto& t : p) out.push_back(Term{t.coeff / scale, t.mono});
    return {scale, out};
}

inline AtomPtr make_polybase(const Poly& normalized) {
    Atom a;
    a.kind = Atom::Kind::PolyBase;
    a.base = normalized;
    return std::make_shared<Atom>(std::move(a));
}

/// Expand a coefficient*monomial into canonical polynomial form: positive
/// integer powers of sum bases multiply out, even powers of derived radial
/// symbols rewrite to their defining polynomials.
inline Poly expand_term(const Rational& c, const Mono& m) {
    if (c.is_zero()) return {};
    Mono plain;
    std::vector<std::pair<Poly, long long>> expansions;
    for (const auto& f : m) {
        if (f.atom->kind == Atom::Kind::Abbrev && f.exp.is_integer() &&
            (f.exp >= Rational(2) || f.exp <= Rational(-2))) {
            long long k = f.exp.num();
            long long pairs = (k >= 0) ? k / 2 : -((-k) / 2);
            long long rem = k - 2 * pairs;
            if (rem != 0) plain.push_back(Factor{f.atom, Rational(rem)});
            if (pairs > 0) expansions.push_back({f.atom->defpoly, pairs});
            else if (pairs < 0) plain.push_back(Factor{make_polybase(f.atom->defpoly), Rational(pairs)});
        } else if (f.atom->kind == Atom::Kind::PolyBase && f.exp.is_integer() && f.exp > Rational(0)) {
            expansions.push_back({f.atom->base, f.exp.num()});
        } else {
            plain.push_back(f);
        }
    }
    std::sort(plain.begin(), plain.end(), [](const Factor& a, const Factor& b) {
        return cmp_atomptr(a.atom, b.atom) < 0;
    });
    Mono merged;
    for (auto& f : plain) {
        if (f.exp.is_zero()) continue;
        if (!merged.empty() && cmp_atomptr(merged.back().atom, f.atom) == 0) {
            merged.back().exp += f.exp;
            if (merged.back().exp.is_zero()) merged.pop_back();
        } else merged.push_back(f);
    }
    Poly out = {Term{c, merged}};
    for (auto& [p, k] : expansions) out = poly_mul(out, poly_pow_int(p, k));
    return out;
}

inline Poly poly_normalize(const Poly& p) {
    Poly out;
    for (const auto& t : p) out = poly_add(out, expand_term(t.coeff, t.mono));
    return out;
}

// ---------------------------------------------------------------------------
// positivity (used by sqrt extraction and the arctan reciprocal rule)
// ---------------------------------------------------------------------------

inline bool poly_is_positive(const Poly& p) {
    if (p.empty()) return false;
    for (const auto& t : p) {
        if (t.coeff.is_negative() || t.coeff.is_zero()) return false;
        for (const auto& f : t.mono) {
            bool even = f.exp.is_integer() && (f.exp.num() % 2 == 0);
            if (!even && !atom_is_positive(*f.atom)) return false;
        }
    }
    return true;
}

inline bool atom_is_positive(const Atom& a) {
    switch (a.kind) {
        case Atom::Kind::Pi: return true;
        case Atom::Kind::Abbrev: return true;  // derived radial symbols are declared positive
        case Atom::Kind::Fn: return a.fn == Fn::exp;
        case Atom::Kind::SqrtQ: return true;   // nonnegative on its domain
        case Atom::Kind::PolyBase: return poly_is_positive(a.base);
        default: return false;
    }
}

// ---------------------------------------------------------------------------
// exact polynomial division (used to reduce quotients)
// ---------------------------------------------------------------------------

inline bool mono_divides(const Mono& d, const Mono& m) {
    size_t i = 0;
    for (const auto& f : d) {
        while (i < m.size() && cmp_atomptr(m[i].atom, f.atom) != 0) ++i;
        if (i == m.size()) return false;
        if (m[i].exp < f.exp) return false;
    }
    return true;
}

inline Mono mono_div(const Mono& m, const Mono& d) {
    Mono inv;
    inv.reserve(d.size());
    for (const auto& f : d) inv.push_back(Factor{f.atom, -f.exp});
    return mono_mul_raw(m, inv);
}

inline std::optional<Poly> poly_exact_divide(Poly num, const Poly& div) {
    if (div.empty()) return std::nullopt;
    Poly q;
    int guard = 0;
    while (!num.empty()) {
        if (++guard > 20000) return std::nullopt;
        const Term& ln = num.front();
        const Term& ld = div.front();
        if (!mono_divides(ld.mono, ln.mono)) return std::nullopt;
        Term t{ln.coeff / ld.coeff, mono_div(ln.mono, ld.mono)};
        q = poly_add(q, {t});
        Poly sub;
        for (const auto& td : div)
            sub = poly_add(sub, expand_term(-t.coeff * td.coeff, mono_mul_raw(t.mono, td.mono)));
        num = poly_add(num, sub);
    }
    return q;
}

// ---------------------------------------------------------------------------
// quotient construction and reduction
// ---------------------------------------------------------------------------

inline Mono den_normalize(const Mono& den) {
    Mono out;
    for (const auto& f : den) {
        if (f.atom->kind == Atom::Kind::Abbrev && f.exp.is_integer() && f.exp >= Rational(2)) {
            long long k = f.exp.num();
            if (k / 2 > 0) out.push_back(Factor{make_polybase(f.atom->defpoly), Rational(k / 2)});
            if (k % 2) out.push_back(Factor{f.atom, Rational(k % 2)});
        } else {
            out.push_back(f);
        }
    }
    std::sort(out.begin(), out.end(), [](const Factor& a, const Factor& b) {
        return cmp_atomptr(a.atom, b.atom) < 0;
    });
    Mono merged;
    for (auto& f : out) {
        if (f.exp.is_zero()) continue;
        if (!merged.empty() && cmp_atomptr(merged.back().atom, f.atom) == 0) {
            merged.back().exp += f.exp;
            if (merged.back().exp.is_zero()) merged.pop_back();
        } else merged.push_back(f);
    }
    return merged;
}

inline Quot quot_reduce(Poly num, Mono den) {
    den = den_normalize(den);
    // move negative exponents out of the numerator
    std::vector<Factor> negs;
    for (const auto& t : num)
        for (const auto& f : t.mono)
            if (f.exp < Rational(0)) {
                bool found = false;
                for (auto& n : negs)
                    if (cmp_atomptr(n.atom, f.atom) == 0) {
                        if (f.exp < n.exp) n.exp = f.exp;
                        found = true;
                        break;
                    }
                if (!found) negs.push_back(f);
            }
    if (!negs.empty()) {
        Mono mult;
        for (auto& n : negs) mult.push_back(Factor{n.atom, -n.exp});
        std::sort(mult.begin(), mult.end(), [](const Factor& a, const Factor& b) {
            return cmp_atomptr(a.atom, b.atom) < 0;
        });
        Poly nn;
        for (const auto& t : num) nn = poly_add(nn, expand_term(t.coeff, mono_mul_raw(t.mono, mult)));
        num = std::move(nn);
        den = den_normalize(mono_mul_raw(den, mult));
    }
    if (num.empty()) return Quot{{}, {}};
    // monomial-level cancellation: atoms common to all numerator terms
    Mono newden;
    for (const auto& f : den) {
        Rational minexp = f.exp;
        for (const auto& t : num) {
            Rational have(0);
            for (const auto& g : t.mono)
                if (cmp_atomptr(g.atom, f.atom) == 0) { have = g.exp; break; }
            if (have < minexp) minexp = have;
            if (minexp <= Rational(0)) { minexp = Rational(0); break; }
        }
        if (!minexp.is_zero()) {
            Mono inv{Factor{f.atom, -minexp}};
            Poly nn;
            for (const auto& t : num) nn = poly_add(nn, expand_term(t.coeff, mono_mul_raw(t.mono, inv)));
            num = std::move(nn);
        }
        Rational rest = f.exp - minexp;
        if (!rest.is_zero()) newden.push_back(Factor{f.atom, rest});
    }
    den = std::move(newden);
    // exact-division cancellation against sum bases in the denominator
    for (auto& f : den) {
        if (f.atom->kind != Atom::Kind::PolyBase) continue;
        while (f.exp >= Rational(1)) {
            auto q = poly_exact_divide(num, f.atom->base);
            if (!q) break;
            num = std::move(*q);
            f.exp -= Rational(1);
        }
    }
    Mono final_den;
    for (auto& f : den)
        if (!f.exp.is_zero()) final_den.push_back(f);
    if (num.empty()) return Quot{{}, {}};
    return Quot{std::move(num), std::move(final_den)};
}

inline Quot quot_const(const Rational& c) { return Quot{poly_const(c), {}}; }
inline Quot quot_zero() { return Quot{{}, {}}; }
inline bool quot_is_zero(const Quot& q) { return q.num.empty(); }
inline bool quot_is_const(const Quot& q) {
    return q.den.empty() && (q.num.empty() || (q.num.size() == 1 && q.num[0].mono.empty()));
}
inline Rational quot_get_const(const Quot& q) {
    if (q.num.empty()) return Rational(0);
    return q.num[0].coeff;
}

inline Quot quot_add(const Quot& a, const Quot& b) {
    if (quot_is_zero(a)) return b;
    if (quot_is_zero(b)) return a;
    Mono den = a.den;
    for (const auto& f : b.den) {
        bool found = false;
        for (auto& g : den)
            if (cmp_atomptr(g.atom, f.atom) == 0) {
                if (f.exp > g.exp) g.exp = f.exp;
                found = true;
                break;
            }
        if (!found) den.push_back(f);
    }
    std::sort(den.begin(), den.end(), [](const Factor& x, const Factor& y) {
        return cmp_atomptr(x.atom, y.atom) < 0;
    });
    auto complement = [&](const Mono& d) {
        Mono c;
        for (const auto& f : den) {
            Rational have(0);
            for (const auto& g : d)
                if (cmp_atomptr(g.atom, f.atom) == 0) { have = g.exp; break; }
            Rational need = f.exp - have;
            if (!need.is_zero()) c.push_back(Factor{f.atom, need});
        }
        return c;
    };
    Mono ca = complement(a.den), cb = complement(b.den);
    Poly na, nb;
    for (const auto& t : a.num) na = poly_add(na, expand_term(t.coeff, mono_mul_raw(t.mono, ca)));
    for (const auto& t : b.num) nb = poly_add(nb, expand_term(t.coeff, mono_mul_raw(t.mono, cb)));
    return quot_reduce(poly_add(na, nb), den);
}

inline Quot quot_neg(Quot q) {
    q.num = poly_neg(std::move(q.num));
    return q;
}

inline Quot quot_sub(const Quot& a, const Quot& b) { return quot_add(a, quot_neg(b)); }

inline Quot quot_mul(const Quot& a, const Quot& b) {
    if (quot_is_zero(a) || quot_is_zero(b)) return quot_zero();
    return quot_reduce(poly_mul(a.num, b.num), mono_mul_raw(a.den, b.den));
}

inline Quot quot_inv(const Quot& q) {
    if (quot_is_zero(q)) throw Error("division by zero expression");
    Poly num = poly_normalize({Term{Rational(1), q.den}});
    if (q.num.size() == 1) {
        const Term& t = q.num[0];
        Poly scaled;
        for (auto& tt : num) scaled.push_back(Term{tt.coeff / t.coeff, tt.mono});
        return quot_reduce(std::move(scaled), t.mono);
    }
    auto [s, base] = poly_base_normalize(q.num);
    Mono den = {Factor{make_polybase(base), Rational(1)}};
    Poly scaled;
    for (auto& tt : num) scaled.push_back(Term{tt.coeff / s, tt.mono});
    return quot_reduce(std::move(scaled), std::move(den));
}

inline Quot quot_div(const Quot& a, const Quot& b) { return quot_mul(a, quot_inv(b)); }

inline Quot quot_pow_int(const Quot& q, long long e) {
    if (e == 0) return quot_const(1);
    Quot base = e < 0 ? quot_inv(q) : q;
    long long k = e < 0 ? -e : e;
    Quot out = quot_const(1);
    while (k > 0) {
        if (k & 1) out = quot_mul(out, base);
        k >>= 1;
        if (k) base = quot_mul(base, base);
    }
    return out;
}

// ---------------------------------------------------------------------------
// function application atoms
// ---------------------------------------------------------------------------

inline Quot quot_from_atom(AtomPtr a, const Rational& e = Rational(1)) {
    if (e.is_zero()) return quot_const(1);
    return quot_reduce({Term{Rational(1), {Factor{std::move(a), e}}}}, {});
}

struct AbbrevHook {
    // chart-known derived radial symbols: defining polynomial -> atom
    std::vector<std::pair<Poly, AtomPtr>> roots;
};

Quot quot_sqrt(const Quot& q, const AbbrevHook* hook = nullptr);

inline Quot quot_pow(const Quot& q, const Rational& e, const AbbrevHook* hook = nullptr) {
    if (e.is_integer()) return quot_pow_int(q, e.num());
    if (e.den() == 2) return quot_pow_int(quot_sqrt(q, hook), e.num());
    throw Error("only integer and half-integer symbolic exponents are supported");
}

inline Quot quot_pi() {
    Atom pi;
    pi.kind = Atom::Kind::Pi;
    return quot_from_atom(std::make_shared<Atom>(std::move(pi)));
}

inline Quot quot_fn(Fn f, const Quot& arg) {
    if (quot_is_const(arg)) {
        Rational c = quot_get_const(arg);
        if (c.is_zero()) {
            switch (f) {
                case Fn::sin: return quot_const(0);
                case Fn::cos: return quot_const(1);
                case Fn::atan: return quot_const(0);
                case Fn::exp: return quot_const(1);
            }
        }
    }
    bool neg = !arg.num.empty() && arg.num.front().coeff.is_negative();
    if (neg && f != Fn::exp) {
        Quot flipped = quot_fn(f, quot_neg(arg));
        return f == Fn::cos ? flipped : quot_neg(flipped);
    }
    if (f == Fn::atan) {
        // atan(1/u) = pi/2 - atan(u) for u > 0 (keeps chart-transition images canonical)
        if (arg.num.size() == 1 && arg.num[0].mono.empty() && !arg.den.empty()) {
            bool pos = arg.num[0].coeff > Rational(0);
            for (const auto& fac : arg.den)
                if (!atom_is_positive(*fac.atom)) { pos = false; break; }
            if (pos)
                return quot_sub(quot_mul(quot_const(Rational(1, 2)), quot_pi()),
                                quot_fn(Fn::atan, quot_inv(arg)));
        }
    }
    Atom a;
    a.kind = Atom::Kind::Fn;
    a.fn = f;
    a.args = {arg};
    return quot_from_atom(std::make_shared<Atom>(std::move(a)));
}

inline Quot quot_sqrt(const Quot& q, const AbbrevHook* hook) {
    if (quot_is_zero(q)) return quot_zero();
    Rational c(1);
    Mono mono;
    Poly polypart;
    if (q.num.size() == 1) {
        c = q.num[0].coeff;
        mono = q.num[0].mono;
    } else {
        auto [s, base] = poly_base_normalize(q.num);
        c = s;
        polypart = base;
    }
    for (const auto& f : q.den) mono.push_back(Factor{f.atom, -f.exp});

    if (c.is_negative()) {
        Atom a;
        a.kind = Atom::Kind::SqrtQ;
        a.inner = q;
        return quot_from_atom(std::make_shared<Atom>(std::move(a)));
    }
    Quot out = quot_const(1);
    Quot residue = quot_const(1);
    if (auto ec = c.exact_sqrt()) out = quot_mul(out, quot_const(*ec));
    else residue = quot_mul(residue, quot_const(c));
    for (const auto& f : mono) {
        Rational half = f.exp / Rational(2);
        bool safe = atom_is_positive(*f.atom);
        if (!safe && half.is_integer() && half.num() % 2 == 0) safe = true;  // a^(4k) -> a^(2k)
        if (safe) out = quot_mul(out, quot_from_atom(f.atom, half));
        else residue = quot_mul(residue, quot_from_atom(f.atom, f.exp));
    }
    if (!polypart.empty()) {
        bool done = false;
        if (hook) {
            for (const auto& [def, atom] : hook->roots)
                if (cmp_poly(def, polypart) == 0) {
                    out = quot_mul(out, quot_from_atom(atom));
                    done = true;
                    break;
                }
        }
        if (!done) {
            AtomPtr pb = make_polybase(polypart);
            if (atom_is_positive(*pb)) out = quot_mul(out, quot_from_atom(pb, Rational(1, 2)));
            else residue = quot_mul(residue, quot_from_atom(pb));
        }
    }
    if (!(quot_is_const(residue) && quot_get_const(residue).is_one())) {
        Atom a;
        a.kind = Atom::Kind::SqrtQ;
        a.inner = residue;
        out = quot_mul(out, quot_from_atom(std::make_shared<Atom>(std::move(a))));
    }
    return out;
}

// ---------------------------------------------------------------------------
// differentiation
// ---------------------------------------------------------------------------

inline Quot atom_diff(const AtomPtr& a, int coord) {
    switch (a->kind) {
        case Atom::Kind::Coord:
            return quot_const(a->idx == coord ? 1 : 0);
        case Atom::Kind::Param:
        case Atom::Kind::Pi:
            return quot_const(0);
        case Atom::Kind::Abbrev: {
            Quot dd = quot_diff(Quot{a->defpoly, {}}, coord);
            if (quot_is_zero(dd)) return quot_const(0);
            return quot_div(dd, quot_mul(quot_const(2), quot_from_atom(a)));
        }
        case Atom::Kind::Fn: {
            Quot du = quot_diff(a->args[0], coord);
            if (quot_is_zero(du)) return quot_const(0);
            switch (a->fn) {
                case Fn::sin: return quot_mul(quot_fn(Fn::cos, a->args[0]), du);
                case Fn::cos: return quot_neg(quot_mul(quot_fn(Fn::sin, a->args[0]), du));
                case Fn::atan:
                    return quot_div(du, quot_add(quot_const(1), quot_mul(a->args[0], a->args[0])));
                case Fn::exp: return quot_mul(quot_from_atom(a), du);
            }
            return quot_const(0);
        }
        case Atom::Kind::SqrtQ: {
            Quot du = quot_diff(a->inner, coord);
            if (quot_is_zero(du)) return quot_const(0);
            return quot_div(du, quot_mul(quot_const(2), quot_from_atom(a)));
        }
        case Atom::Kind::Opaque: {
            Quot total = quot_zero();
            for (size_t i = 0; i < a->args.size(); ++i) {
                Quot dai = quot_diff(a->args[i], coord);
                if (quot_is_zero(dai)) continue;
                Quot part = quot_subst_coords(a->odef->partials[i], a->args, nullptr);
                total = quot_add(total, quot_mul(part, dai));
            }
            return total;
        }
        case Atom::Kind::Piecewise: {
            Atom out;
            out.kind = Atom::Kind::Piecewise;
            out.guard = a->guard;
            for (const auto& p : a->pieces) out.pieces.push_back(Piece{p.lo, p.hi, quot_diff(p.value, coord)});
            return quot_from_atom(std::make_shared<Atom>(std::move(out)));
        }
        case Atom::Kind::PolyBase:
            return quot_diff(Quot{a->base, {}}, coord);
    }
    return quot_const(0);
}

inline Quot quot_diff(const Quot& q, int coord) {
    Quot total = quot_zero();
    for (const auto& t : q.num) {
        for (size_t i = 0; i < t.mono.size(); ++i) {
            Quot da = atom_diff(t.mono[i].atom, coord);
            if (quot_is_zero(da)) continue;
            Mono rest;
            for (size_t j = 0; j < t.mono.size(); ++j) {
                if (j == i) {
                    Rational e = t.mono[j].exp - Rational(1);
                    if (!e.is_zero()) rest.push_back(Factor{t.mono[j].atom, e});
                } else rest.push_back(t.mono[j]);
            }
            Quot piece = quot_reduce(expand_term(t.coeff * t.mono[i].exp, rest), {});
            total = quot_add(total, quot_mul(piece, da));
        }
    }
    Quot result = quot_mul(total, quot_reduce(poly_const(1), q.den));
    if (!q.den.empty()) {
        Quot dlog = quot_zero();  // dM/M = sum e_i da_i / a_i
        for (const auto& f : q.den) {
            Quot da = atom_diff(f.atom, coord);
            if (quot_is_zero(da)) continue;
            dlog = quot_add(dlog, quot_mul(quot_const(f.exp), quot_div(da, quot_from_atom(f.atom))));
        }
        if (!quot_is_zero(dlog)) result = quot_sub(result, quot_mul(q, dlog));
    }
    return result;
}

// ---------------------------------------------------------------------------
// substitution
// ---------------------------------------------------------------------------

inline Quot quot_subst_coords(const Quot& q, const std::vector<Quot>& images, const AbbrevHook* hook) {
    std::function<Quot(const Quot&)> self = [&](const Quot& in) -> Quot {
        auto map_atom = [&](const AtomPtr& a) -> Quot {
            switch (a->kind) {
                case Atom::Kind::Coord:
                    if (a->idx < 0 || a->idx >= static_cast<int>(images.size()))
                        throw Error("substitution image missing for a coordinate");
                    return images[a->idx];
                case Atom::Kind::Param:
                case Atom::Kind::Pi:
                    return quot_from_atom(a);
                case Atom::Kind::Abbrev:
                    return quot_sqrt(self(Quot{a->defpoly, {}}), hook);
                case Atom::Kind::Fn:
                    return quot_fn(a->fn, self(a->args[0]));
                case Atom::Kind::SqrtQ:
                    return quot_sqrt(self(a->inner), hook);
                case Atom::Kind::Opaque: {
                    Atom out;
                    out.kind = Atom::Kind::Opaque;
                    out.name = a->name;
                    out.odef = a->odef;
                    for (const auto& arg : a->args) out.args.push_back(self(arg));
                    return quot_from_atom(std::make_shared<Atom>(std::move(out)));
                }
                case Atom::Kind::Piecewise: {
                    Atom out;
                    out.kind = Atom::Kind::Piecewise;
                    out.guard = self(a->guard);
                    for (const auto& p : a->pieces) out.pieces.push_back(Piece{p.lo, p.hi, self(p.value)});
                    return quot_from_atom(std::make_shared<Atom>(std::move(out)));
                }
                case Atom::Kind::PolyBase:
                    return self(Quot{a->base, {}});
            }
            return quot_zero();
        };
        Quot total = quot_zero();
        for (const auto& t : in.num) {
            Quot term = quot_const(t.coeff);
            for (const auto& f : t.mono) term = quot_mul(term, quot_pow(map_atom(f.atom), f.exp, hook));
            total = quot_add(total, term);
        }
        for (const auto& f : in.den) total = quot_mul(total, quot_pow(map_atom(f.atom), -f.exp, hook));
        return total;
    };
    return self(q);
}

// ---------------------------------------------------------------------------
// numeric evaluation
// ---------------------------------------------------------------------------

struct EvalEnv {
    const std::vector<double>* coords = nullptr;
    const std::map<std::string, double>* params = nullptr;
};

double atom_eval(const Atom& a, const EvalEnv& env);

inline double quot_eval(const Quot& q, const EvalEnv& env) {
    double num = 0;
    for (const auto& t : q.num) {
        double v = t.coeff.to_double();
        for (const auto& f : t.mono) {
            double base = atom_eval(*f.atom, env);
            double p;
            if (f.exp.is_integer()) p = std::pow(base, static_cast<double>(f.exp.num()));
            else {
                if (base < 0) throw Error("domain error: fractional power of negative base");
                p = std::pow(base, f.exp.to_double());
            }
            v *= p;
        }
        num += v;
    }
    double den = 1;
    for (const auto& f : q.den) {
        double base = atom_eval(*f.atom, env);
        den *= f.exp.is_integer() ? std::pow(base, static_cast<double>(f.exp.num()))
                                  : std::pow(base, f.exp.to_double());
    }
    if (den == 0 || !std::isfinite(den))
        throw Error("division by zero while evaluating a denominator");
    return num / den;
}

inline double atom_eval(const Atom& a, const EvalEnv& env) {
    switch (a.kind) {
        case Atom::Kind::Coord:
            if (!env.coords || a.idx >= static_cast<int>(env.coords->size()))
                throw Error("evaluation point does not assign every coordinate");
            return (*env.coords)[a.idx];
        case Atom::Kind::Param: {
            if (!env.params) throw Error("missing parameter value: " + a.name);
            auto it = env.params->find(a.name);
            if (it == env.params->end()) throw Error("missing parameter value: " + a.name);
            return it->second;
        }
        case Atom::Kind::Pi:
            return M_PI;
        case Atom::Kind::Abbrev: {
            double v = quot_eval(Quot{a.defpoly, {}}, env);
            if (v < 0) throw Error("domain error: negative radicand for " + a.name);
            return std::sqrt(v);
        }
        case Atom::Kind::Fn: {
            double u = quot_eval(a.args[0], env);
            switch (a.fn) {
                case Fn::sin: return std::sin(u);
                case Fn::cos: return std::cos(u);
                case Fn::atan: return std::atan(u);
                case Fn::exp: return std::exp(u);
            }
            return 0;
        }
        case Atom::Kind::SqrtQ: {
            double u = quot_eval(a.inner, env);
            if (u < 0) throw Error("domain error: sqrt of negative value");
            return std::sqrt(u);
        }
        case Atom::Kind::Opaque:
            throw Error("opaque function '" + a.name + "' has no numeric rule; substitute it first");
        case Atom::Kind::Piecewise: {
            double u = quot_eval(a.guard, env);
            for (const auto& p : a.pieces)
                if (u >= p.lo && u < p.hi) return quot_eval(p.value, env);
            if (!a.pieces.empty() && u == a.pieces.back().hi) return quot_eval(a.pieces.back().value, env);
            throw Error("piecewise guard value not covered by any region");
        }
        case Atom::Kind::PolyBase:
            return quot_eval(Quot{a.base, {}}, env);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// printing
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline std::string mono_str(const Rational& c, const Mono& m, const std::vector<std::string>& coords) {
    std::ostringstream os;
    if (m.empty()) return c.str();
    if (c == Rational(-1)) os << "-";
    else if (!c.is_one()) os << c.str() << "*";
    bool first = true;
    for (const auto& f : m) {
        if (!first) os << "*";
        first = false;
        std::string base = atom_str(*f.atom, coords);
        if (f.exp.is_one()) os << base;
        else if (f.exp == Rational(1, 2)) os << "sqrt(" << base << ")";
        else if (f.exp.is_integer() && !f.exp.is_negative()) os << base << "^" << f.exp.str();
        else os << base << "^(" << f.exp.str() << ")";
    }
    return os.str();
}

inline std::string poly_str(const Poly& p, const std::vector<std::string>& coords) {
    if (p.empty()) return "0";
    std::ostringstream os;
    bool first = true;
    for (const auto& t : p) {
        std::string s = mono_str(t.coeff, t.mono, coords);
        if (first) { os << s; first = false; continue; }
        if (!s.empty() && s[0] == '-') os << " - " << s.substr(1);
        else os << " + " << s;
    }
    return os.str();
}

inline std::string quot_str(const Quot& q, const std::vector<std::string>& coords) {
    std::string n = poly_str(q.num, coords);
    if (q.den.empty()) return n;
    std::ostringstream os;
    if (q.num.size() > 1) os << "(" << n << ")";
    else os << n;
    os << "/(";
    bool first = true;
    for (const auto& f : q.den) {
        if (!first) os << "*";
        first = false;
        std::string base = atom_str(*f.atom, coords);
        if (f.exp.is_one()) os << base;
        else os << base << "^" << (f.exp.is_integer() ? f.exp.str() : "(" + f.exp.str() + ")");
    }
    os << ")";
    return os.str();
}

inline std::string atom_str(const Atom& a, const std::vector<std::string>& coords) {
    switch (a.kind) {
        case Atom::Kind::Coord:
            if (a.idx < static_cast<int>(coords.size())) return coords[a.idx];
            return "$" + std::to_string(a.idx);
        case Atom::Kind::Param: return a.name;
        case Atom::Kind::Pi: return "pi";
        case Atom::Kind::Abbrev: return a.name;
        case Atom::Kind::Fn: return std::string(fn_name(a.fn)) + "(" + quot_str(a.args[0], coords) + ")";
        case Atom::Kind::SqrtQ: return "sqrt(" + quot_str(a.inner, coords) + ")";
        case Atom::Kind::Opaque: {
            std::string s = a.name + "(";
            for (size_t i = 0; i < a.args.size(); ++i) {
                if (i) s += ",";
                s += quot_str(a.args[i], coords);
            }
            return s + ")";
        }
        case Atom::Kind::Piecewise: {
            std::string s = "piecewise(" + quot_str(a.guard, coords);
            for (const auto& p : a.pieces)
                s += "," + format_double(p.lo) + "," + format_double(p.hi) + "," + quot_str(p.value, coords);
            return s + ")";
        }
        case Atom::Kind::PolyBase: return "(" + poly_str(a.base, coords) + ")";
    }
    return "?";
}

/// True when the expression contains atoms outside the rational/radical core
/// (trig, arctan, exponentials, bumps, opaque nodes); such residuals fall back
/// to sampled checks.
inline bool quot_has_transcendental(const Quot& q) {
    std::function<bool(const AtomPtr&)> check = [&](const AtomPtr& a) -> bool {
        switch (a->kind) {
            case Atom::Kind::Fn:
            case Atom::Kind::Opaque:
            case Atom::Kind::Piecewise:
            case Atom::Kind::Pi:
                return true;
            case Atom::Kind::SqrtQ: {
                for (const auto& t : a->inner.num)
                    for (const auto& f : t.mono)
                        if (check(f.atom)) return true;
                for (const auto& f : a->inner.den)
                    if (check(f.atom)) return true;
                return false;
            }
            default:
                return false;
        }
    };
    for (const auto& t : q.num)
        for (const auto& f : t.mono)
            if (check(f.atom)) return true;
    for (const auto& f : q.den)
        if (check(f.atom)) return true;
    return false;
}

} // namespace foliage
