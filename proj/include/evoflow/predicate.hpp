#pragma once
/// Gate predicate language.
///
///     expr    := or
///     or      := and ( "||" and )*
///     and     := unary ( "&&" unary )*
///     unary   := "!" unary | "(" expr ")" | compare
///     compare := KEY OP literal
///     OP      := "==" | "!=" | "<" | "<=" | ">" | ">="
///     literal := NUMBER | "quoted string" | bare-word
///
/// Keys are `[A-Za-z_][A-Za-z0-9_.]*`. Ordering operators compare numerically
/// when both sides parse as numbers and lexicographically otherwise.

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace evoflow {

class Predicate {
  public:
    enum class Op { Eq, Ne, Lt, Le, Gt, Ge };

    struct Compare {
        std::string key;
        Op op;
        std::string literal;
    };
    struct Not;
    struct And;
    struct Or;
    using Node = std::variant<Compare, std::shared_ptr<const Not>, std::shared_ptr<const And>,
                              std::shared_ptr<const Or>>;
    struct Not {
        Node operand;
    };
    struct And {
        std::vector<Node> operands;
    };
    struct Or {
        std::vector<Node> operands;
    };

    /// Throws ParseError with the offending byte offset.
    static Predicate parse(std::string_view source);

    /// Evaluates against `state`. Returns nullopt when any referenced key is
    /// absent (the caller picks the missing-key branch).
    std::optional<bool> evaluate(const std::map<std::string, std::string>& state) const;

    std::set<std::string> referenced_keys() const;

    /// Canonical source text; parse(to_string()) yields an equal predicate.
    std::string to_string() const;

    const std::string& source() const { return source_; }

    bool operator==(const Predicate& other) const { return to_string() == other.to_string(); }

  private:
    Node root_;
    std::string source_;
};

} // namespace evoflow
