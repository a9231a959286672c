#include "evoflow/predicate.hpp"

#include <cctype>
#include <charconv>
#include <cstdlib>

#include "evoflow/errors.hpp"

namespace evoflow {
namespace {

class Parser {
  public:
    explicit Parser(std::string_view src) : src_(src) {}

    Predicate::Node parse_all() {
        auto node = parse_or();
        skip_ws();
        if (pos_ != src_.size())
            fail("unexpected trailing input");
        return node;
    }

  private:
    std::string_view src_;
    std::size_t pos_ = 0;

    [[noreturn]] void fail(const std::string& msg) const {
        throw ParseError("predicate: " + msg, pos_);
    }

    void skip_ws() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_])))
            ++pos_;
    }

    bool consume(std::string_view tok) {
        skip_ws();
        if (src_.substr(pos_, tok.size()) == tok) {
            pos_ += tok.size();
            return true;
        }
        return false;
    }

    Predicate::Node parse_or() {
        std::vector<Predicate::Node> ops{parse_and()};
        while (consume("||"))
            ops.push_back(parse_and());
        if (ops.size() == 1)
            return ops.front();
        return std::make_shared<const Predicate::Or>(Predicate::Or{std::move(ops)});
    }

    Predicate::Node parse_and() {
        std::vector<Predicate::Node> ops{parse_unary()};
        while (consume("&&"))
            ops.push_back(parse_unary());
        if (ops.size() == 1)
            return ops.front();
        return std::make_shared<const Predicate::And>(Predicate::And{std::move(ops)});
    }

    Predicate::Node parse_unary() {
        skip_ws();
        if (pos_ < src_.size() && src_[pos_] == '!' && src_.substr(pos_, 2) != "!=") {
            ++pos_;
            return std::make_shared<const Predicate::Not>(Predicate::Not{parse_unary()});
        }
        if (consume("(")) {
            auto inner = parse_or();
            if (!consume(")"))
                fail("expected ')'");
            return inner;
        }
        return parse_compare();
    }

    static bool key_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
    static bool key_char(char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
    }

    Predicate::Node parse_compare() {
        skip_ws();
        if (pos_ >= src_.size() || !key_start(src_[pos_]))
            fail("expected state key");
        std::size_t start = pos_;
        while (pos_ < src_.size() && key_char(src_[pos_]))
            ++pos_;
        std::string key(src_.substr(start, pos_ - start));

        Predicate::Op op;
        if (consume("=="))
            op = Predicate::Op::Eq;
        else if (consume("!="))
            op = Predicate::Op::Ne;
        else if (consume("<="))
            op = Predicate::Op::Le;
        else if (consume(">="))
            op = Predicate::Op::Ge;
        else if (consume("<"))
            op = Predicate::Op::Lt;
        else if (consume(">"))
            op = Predicate::Op::Gt;
        else
            fail("expected comparison operator");

        skip_ws();
        if (pos_ >= src_.size())
            fail("expected literal");
        std::string literal;
        if (src_[pos_] == '"') {
            ++pos_;
            while (pos_ < src_.size() && src_[pos_] != '"') {
                if (src_[pos_] == '\\' && pos_ + 1 < src_.size())
                    ++pos_;
                literal += src_[pos_++];
            }
            if (pos_ >= src_.size())
                fail("unterminated string literal");
            ++pos_;
        } else {
            std::size_t lstart = pos_;
            while (pos_ < src_.size() &&
                   (key_char(src_[pos_]) || src_[pos_] == '-' || src_[pos_] == '+'))
                ++pos_;
            if (lstart == pos_)
                fail("expected literal");
            literal = std::string(src_.substr(lstart, pos_ - lstart));
        }
        return Predicate::Compare{std::move(key), op, std::move(literal)};
    }
};

std::optional<double> as_number(const std::string& s) {
    if (s.empty())
        return std::nullopt;
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size())
        return std::nullopt;
    return v;
}

bool compare_values(const std::string& lhs, Predicate::Op op, const std::string& rhs) {
    auto ln = as_number(lhs);
    auto rn = as_number(rhs);
    int cmp;
    if (ln && rn)
        cmp = *ln < *rn ? -1 : (*ln > *rn ? 1 : 0);
    else
        cmp = lhs.compare(rhs) < 0 ? -1 : (lhs.compare(rhs) > 0 ? 1 : 0);
    switch (op) {
    case Predicate::Op::Eq: return cmp == 0;
    case Predicate::Op::Ne: return cmp != 0;
    case Predicate::Op::Lt: return cmp < 0;
    case Predicate::Op::Le: return cmp <= 0;
    case Predicate::Op::Gt: return cmp > 0;
    case Predicate::Op::Ge: return cmp >= 0;
    }
    return false;
}

const char* op_text(Predicate::Op op) {
    switch (op) {
    case Predicate::Op::Eq: return "==";
    case Predicate::Op::Ne: return "!=";
    case Predicate::Op::Lt: return "<";
    case Predicate::Op::Le: return "<=";
    case Predicate::Op::Gt: return ">";
    case Predicate::Op::Ge: return ">=";
    }
    return "?";
}

// nullopt propagates: a missing key anywhere makes the whole predicate undecided.
std::optional<bool> eval(const Predicate::Node& node, const std::map<std::string, std::string>& state) {
    struct Visitor {
        const std::map<std::string, std::string>& state;
        std::optional<bool> operator()(const Predicate::Compare& c) const {
            auto it = state.find(c.key);
            if (it == state.end())
                return std::nullopt;
            return compare_values(it->second, c.op, c.literal);
        }
        std::optional<bool> operator()(const std::shared_ptr<const Predicate::Not>& n) const {
            auto v = eval(n->operand, state);
            if (!v)
                return std::nullopt;
            return !*v;
        }
        std::optional<bool> operator()(const std::shared_ptr<const Predicate::And>& n) const {
            bool result = true;
            for (const auto& op : n->operands) {
                auto v = eval(op, state);
                if (!v)
                    return std::nullopt;
                result = result && *v;
            }
            return result;
        }
        std::optional<bool> operator()(const std::shared_ptr<const Predicate::Or>& n) const {
            bool result = false;
            for (const auto& op : n->operands) {
                auto v = eval(op, state);
                if (!v)
                    return std::nullopt;
                result = result || *v;
            }
            return result;
        }
    };
    return std::visit(Visitor{state}, node);
}

void collect_keys(const Predicate::Node& node, std::set<std::string>& out) {
    if (auto* c = std::get_if<Predicate::Compare>(&node)) {
        out.insert(c->key);
    } else if (auto* n = std::get_if<std::shared_ptr<const Predicate::Not>>(&node)) {
        collect_keys((*n)->operand, out);
    } else if (auto* a = std::get_if<std::shared_ptr<const Predicate::And>>(&node)) {
        for (const auto& op : (*a)->operands)
            collect_keys(op, out);
    } else if (auto* o = std::get_if<std::shared_ptr<const Predicate::Or>>(&node)) {
        for (const auto& op : (*o)->operands)
            collect_keys(op, out);
    }
}

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\')
            out += '\\';
        out += c;
    }
    return out + "\"";
}

std::string render(const Predicate::Node& node) {
    if (auto* c = std::get_if<Predicate::Compare>(&node))
        return c->key + " " + op_text(c->op) + " " + quote(c->literal);
    if (auto* n = std::get_if<std::shared_ptr<const Predicate::Not>>(&node))
        return "!(" + render((*n)->operand) + ")";
    auto join = [](const std::vector<Predicate::Node>& ops, const char* sep) {
        std::string out;
        for (std::size_t i = 0; i < ops.size(); ++i) {
            if (i)
                out += sep;
            out += "(" + render(ops[i]) + ")";
        }
        return out;
    };
    if (auto* a = std::get_if<std::shared_ptr<const Predicate::And>>(&node))
        return join((*a)->operands, " && ");
    auto* o = std::get_if<std::shared_ptr<const Predicate::Or>>(&node);
    return join((*o)->operands, " || ");
}

} // namespace

Predicate Predicate::parse(std::string_view source) {
    Predicate p;
    p.root_ = Parser(source).parse_all();
    p.source_ = std::string(source);
    return p;
}

std::optional<bool> Predicate::evaluate(const std::map<std::string, std::string>& state) const {
    return eval(root_, state);
}

std::set<std::string> Predicate::referenced_keys() const {
    std::set<std::string> keys;
    collect_keys(root_, keys);
    return keys;
}

std::string Predicate::to_string() const { return render(root_); }

} // namespace evoflow
