#include "cee/formula.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "cee/error.hpp"

namespace cee {

Link parse_link(std::string_view text) {
    if (text == "identity") return Link::identity;
    if (text == "log") return Link::log;
    throw ConfigError("unknown link '" + std::string(text) + "' (expected identity or log)");
}

Family parse_family(std::string_view text) {
    if (text == "gaussian") return Family::gaussian;
    if (text == "binomial") return Family::binomial;
    throw ConfigError("unknown family '" + std::string(text) + "' (expected gaussian or binomial)");
}

std::string to_string(Link link) { return link == Link::identity ? "identity" : "log"; }
std::string to_string(Family family) { return family == Family::gaussian ? "gaussian" : "binomial"; }

bool is_treatment_name(std::string_view name) { return name == "a" || name == "A" || name == "treat"; }

Term Term::interact(const Term& inner) {
    if (inner.kind != Kind::linear && inner.kind != Kind::spline)
        throw ConfigError("only linear and spline terms can interact with treatment, got " + inner.label());
    Term t;
    t.kind = Kind::treat_interact;
    t.var = inner.var;
    t.spline_inner = inner.kind == Kind::spline;
    t.smooth = inner.smooth;
    return t;
}

Term Term::inner() const {
    if (kind != Kind::treat_interact) return *this;
    return spline_inner ? Term::spline(var, smooth.num_basis, smooth.penalty_order) : Term::linear(var);
}

std::string Term::label() const {
    switch (kind) {
        case Kind::intercept: return "(Intercept)";
        case Kind::linear: return var;
        case Kind::spline:
            return "s(" + var + "," + std::to_string(smooth.num_basis) +
                   (smooth.penalty_order != 2 ? "," + std::to_string(smooth.penalty_order) : "") + ")";
        case Kind::treat_main: return "a";
        case Kind::treat_interact: return "a:" + inner().label();
    }
    return {};
}

void FormulaSpec::validate() const {
    std::set<std::string> splines, interacted_splines;
    for (const auto& t : terms) {
        if (t.is_spline()) {
            if (t.smooth.num_basis < t.smooth.penalty_order + 2)
                throw ConfigError("spline term " + t.label() + ": number of basis functions must be at least "
                                  "penalty order + 2");
            if (t.smooth.penalty_order < 1) throw ConfigError("spline term " + t.label() + ": penalty order must be >= 1");
            auto& seen = t.kind == Term::Kind::spline ? splines : interacted_splines;
            if (!seen.insert(t.var).second)
                throw ConfigError("more than one spline term for variable '" + t.var + "'");
        }
        if (t.kind == Term::Kind::treat_interact) {
            const Term main = t.inner();
            if (std::find(terms.begin(), terms.end(), main) == terms.end())
                throw ConfigError("interaction " + t.label() + " requires the main term " + main.label());
        }
    }
}

bool FormulaSpec::uses_treatment() const {
    return std::any_of(terms.begin(), terms.end(), [](const Term& t) {
        return t.kind == Term::Kind::treat_main || t.kind == Term::Kind::treat_interact;
    });
}

bool FormulaSpec::has_splines() const {
    return std::any_of(terms.begin(), terms.end(), [](const Term& t) { return t.is_spline(); });
}

std::string FormulaSpec::to_string() const {
    std::string out = (response.empty() ? std::string("y") : response) + " ~ ";
    bool intercept = false;
    std::string rhs;
    for (const auto& t : terms) {
        if (t.kind == Term::Kind::intercept) {
            intercept = true;
            continue;
        }
        rhs += (rhs.empty() ? "" : " + ") + t.label();
    }
    if (rhs.empty()) return out + (intercept ? "1" : "0");
    return out + rhs + (intercept ? "" : " - 1");
}

namespace {

struct Token {
    enum class Type { ident, number, symbol, end } type;
    std::string text;
};

std::vector<Token> tokenize(std::string_view s) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < s.size()) {
        const char c = s[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
        } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t j = i;
            while (j < s.size() && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '_' || s[j] == '.')) ++j;
            out.push_back({Token::Type::ident, std::string(s.substr(i, j - i))});
            i = j;
        } else if (std::isdigit(static_cast<unsigned char>(c))) {
            std::size_t j = i;
            while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
            out.push_back({Token::Type::number, std::string(s.substr(i, j - i))});
            i = j;
        } else if (std::string_view("~+-*:(),").find(c) != std::string_view::npos) {
            out.push_back({Token::Type::symbol, std::string(1, c)});
            ++i;
        } else {
            throw ConfigError("formula: unexpected character '" + std::string(1, c) + "'");
        }
    }
    out.push_back({Token::Type::end, {}});
    return out;
}

// Terms produced by a sub-expression. `treatment` marks a bare treatment
// symbol so products can expand it.
struct Group {
    std::vector<Term> terms;
    bool treatment = false;
    bool drop_intercept = false;
};

void append_unique(std::vector<Term>& dst, const Term& t) {
    if (std::find(dst.begin(), dst.end(), t) == dst.end()) dst.push_back(t);
}

class Parser {
public:
    explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

    FormulaSpec parse(Family family) {
        FormulaSpec spec;
        spec.family = family;
        if (toks_.size() > 2 && toks_[0].type == Token::Type::ident && is_symbol(toks_[1], "~")) {
            spec.response = toks_[0].text;
            pos_ = 2;
        } else if (is_symbol(peek(), "~")) {
            ++pos_;
        }
        Group g = sum();
        if (peek().type != Token::Type::end) fail("unexpected '" + peek().text + "'");
        if (g.treatment) append_unique(g.terms, Term::treat_main());

        const bool has_intercept = std::any_of(g.terms.begin(), g.terms.end(),
                                               [](const Term& t) { return t.kind == Term::Kind::intercept; });
        if (!g.drop_intercept && !has_intercept) spec.terms.push_back(Term::intercept());
        for (const auto& t : g.terms) {
            if (g.drop_intercept && t.kind == Term::Kind::intercept) continue;
            spec.terms.push_back(t);
        }
        // Keep the intercept first.
        std::stable_partition(spec.terms.begin(), spec.terms.end(),
                              [](const Term& t) { return t.kind == Term::Kind::intercept; });
        spec.validate();
        return spec;
    }

private:
    std::vector<Token> toks_;
    std::size_t pos_ = 0;

    const Token& peek() const { return toks_[pos_]; }
    static bool is_symbol(const Token& t, const char* s) { return t.type == Token::Type::symbol && t.text == s; }
    [[noreturn]] void fail(const std::string& msg) const { throw ConfigError("formula: " + msg); }
    void expect(const char* s) {
        if (!is_symbol(peek(), s)) fail(std::string("expected '") + s + "'");
        ++pos_;
    }

    Group sum() {
        Group out;
        bool negate = false;
        if (is_symbol(peek(), "-")) {
            negate = true;
            ++pos_;
        }
        for (;;) {
            Group g = product();
            if (negate) {
                if (!(g.terms.size() == 1 && g.terms[0].kind == Term::Kind::intercept) && !g.drop_intercept)
                    fail("only '- 1' may be subtracted");
                out.drop_intercept = true;
            } else {
                if (g.treatment) append_unique(out.terms, Term::treat_main());
                for (const auto& t : g.terms) append_unique(out.terms, t);
                out.drop_intercept = out.drop_intercept || g.drop_intercept;
            }
            if (is_symbol(peek(), "+")) {
                negate = false;
                ++pos_;
            } else if (is_symbol(peek(), "-")) {
                negate = true;
                ++pos_;
            } else {
                break;
            }
        }
        return out;
    }

    Group product() {
        Group lhs = factor();
        while (is_symbol(peek(), "*") || is_symbol(peek(), ":")) {
            const bool full = peek().text == "*";
            ++pos_;
            Group rhs = factor();
            lhs = combine(lhs, rhs, full);
        }
        return lhs;
    }

    Group combine(const Group& l, const Group& r, bool full) {
        if (l.treatment == r.treatment) fail("products must have the treatment on exactly one side");
        const Group& other = l.treatment ? r : l;
        Group out;
        if (full) out.terms.push_back(Term::treat_main());
        for (const auto& t : other.terms) {
            if (t.kind == Term::Kind::intercept) continue;
            if (full) append_unique(out.terms, t);
        }
        for (const auto& t : other.terms) {
            if (t.kind == Term::Kind::intercept) continue;
            append_unique(out.terms, Term::interact(t));
        }
        return out;
    }

    Group factor() {
        const Token tok = peek();
        if (is_symbol(tok, "(")) {
            ++pos_;
            Group g = sum();
            expect(")");
            return g;
        }
        if (tok.type == Token::Type::number) {
            ++pos_;
            Group g;
            if (tok.text == "1") {
                g.terms.push_back(Term::intercept());
            } else if (tok.text == "0") {
                g.drop_intercept = true;
            } else {
                fail("only 0 or 1 may appear as a numeric term");
            }
            return g;
        }
        if (tok.type != Token::Type::ident) fail("expected a term");
        ++pos_;
        Group g;
        if (tok.text == "s" && is_symbol(peek(), "(")) {
            ++pos_;
            if (peek().type != Token::Type::ident) fail("s() expects a variable name");
            std::string var = peek().text;
            ++pos_;
            SmoothSpec sm;
            if (is_symbol(peek(), ",")) {
                ++pos_;
                sm.num_basis = integer();
                if (is_symbol(peek(), ",")) {
                    ++pos_;
                    sm.penalty_order = integer();
                }
            }
            expect(")");
            if (is_treatment_name(var)) fail("the treatment cannot be smoothed");
            g.terms.push_back(Term::spline(var, sm.num_basis, sm.penalty_order));
            return g;
        }
        if (is_treatment_name(tok.text)) {
            g.treatment = true;
            return g;
        }
        g.terms.push_back(Term::linear(tok.text));
        return g;
    }

    int integer() {
        if (peek().type != Token::Type::number) fail("expected an integer");
        return std::stoi(toks_[pos_++].text);
    }
};

}  // namespace

FormulaSpec parse_formula(std::string_view text, Family family) {
    return Parser(tokenize(text)).parse(family);
}

}  // namespace cee
