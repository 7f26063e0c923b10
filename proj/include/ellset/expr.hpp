#pragma once

// Whitelisted arithmetic expressions for configuration files. An expression
// may reference the time index k, candidate parameters theta(1)..theta(m)
// (also spellable theta1..thetam), the constants pi and e, and the functions
// sin, cos, tan, atan (alias arctan), exp, log, sqrt, abs, combined with
// + - * / ^, unary sign, and parentheses. Expressions compile once into a
// postfix program and evaluate with plain doubles; there is no assignment,
// no control flow, and no access beyond (k, theta).

#include <cctype>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ellset/linalg.hpp"

namespace ellset {

class Expression {
 public:
  Expression() = default;

  static Expression parse(const std::string& text) {
    Parser parser(text);
    Expression out;
    out.text_ = text;
    parser.compile_sum(out.ops_);
    parser.expect_end();
    return out;
  }

  // Exact constant, bypassing the decimal round trip of parse().
  static Expression constant(double value) {
    Expression out;
    out.ops_.push_back({kPushConst, value});
    out.text_ = std::to_string(value);
    return out;
  }

  double evaluate(int k, const Eigen::VectorXd& theta = Eigen::VectorXd())
      const {
    detail::require(!ops_.empty(), "Expression: evaluating an empty program");
    double stack[kMaxDepth];
    int top = -1;
    for (const Op& op : ops_) {
      switch (op.code) {
        case kPushConst:
          stack[++top] = op.value;
          break;
        case kPushK:
          stack[++top] = static_cast<double>(k);
          break;
        case kPushTheta:
          detail::require(op.index < theta.size(),
                          "Expression: theta(" + std::to_string(op.index + 1) +
                              ") referenced but only " +
                              std::to_string(theta.size()) +
                              " parameters were supplied");
          stack[++top] = theta[op.index];
          break;
        case kNegate:
          stack[top] = -stack[top];
          break;
        case kAdd:
          --top;
          stack[top] += stack[top + 1];
          break;
        case kSubtract:
          --top;
          stack[top] -= stack[top + 1];
          break;
        case kMultiply:
          --top;
          stack[top] *= stack[top + 1];
          break;
        case kDivide:
          --top;
          stack[top] /= stack[top + 1];
          break;
        case kPower:
          --top;
          stack[top] = std::pow(stack[top], stack[top + 1]);
          break;
        case kSin:
          stack[top] = std::sin(stack[top]);
          break;
        case kCos:
          stack[top] = std::cos(stack[top]);
          break;
        case kTan:
          stack[top] = std::tan(stack[top]);
          break;
        case kAtan:
          stack[top] = std::atan(stack[top]);
          break;
        case kExp:
          stack[top] = std::exp(stack[top]);
          break;
        case kLog:
          stack[top] = std::log(stack[top]);
          break;
        case kSqrt:
          stack[top] = std::sqrt(stack[top]);
          break;
        case kAbs:
          stack[top] = std::abs(stack[top]);
          break;
      }
    }
    return stack[0];
  }

  // Highest 1-based theta index referenced, 0 when the expression is pure k.
  int max_theta() const {
    Eigen::Index max_index = 0;
    for (const Op& op : ops_) {
      if (op.code == kPushTheta && op.index + 1 > max_index) {
        max_index = op.index + 1;
      }
    }
    return static_cast<int>(max_index);
  }

  bool empty() const { return ops_.empty(); }
  const std::string& text() const { return text_; }

 private:
  enum Code {
    kPushConst,
    kPushK,
    kPushTheta,
    kNegate,
    kAdd,
    kSubtract,
    kMultiply,
    kDivide,
    kPower,
    kSin,
    kCos,
    kTan,
    kAtan,
    kExp,
    kLog,
    kSqrt,
    kAbs,
  };

  struct Op {
    Code code;
    double value = 0.0;
    Eigen::Index index = 0;
  };

  // Binary operators consume one stack slot net, so the depth never exceeds
  // the operand count of the deepest right-leaning chain; 64 is generous for
  // hand-written matrix entries and enforced at parse time.
  static constexpr int kMaxDepth = 64;

  class Parser {
   public:
    explicit Parser(const std::string& text) : text_(text) {}

    // sum := product (('+'|'-') product)*
    void compile_sum(std::vector<Op>& ops) {
      compile_product(ops);
      for (;;) {
        if (consume('+')) {
          compile_product(ops);
          push(ops, {kAdd});
        } else if (consume('-')) {
          compile_product(ops);
          push(ops, {kSubtract});
        } else {
          return;
        }
      }
    }

    void expect_end() {
      skip_space();
      if (pos_ != text_.size()) fail("unexpected trailing input");
    }

   private:
    // product := signed (('*'|'/') signed)*
    void compile_product(std::vector<Op>& ops) {
      compile_signed(ops);
      for (;;) {
        if (consume('*')) {
          compile_signed(ops);
          push(ops, {kMultiply});
        } else if (consume('/')) {
          compile_signed(ops);
          push(ops, {kDivide});
        } else {
          return;
        }
      }
    }

    // signed := ('+'|'-') signed | power; -x^2 reads as -(x^2).
    void compile_signed(std::vector<Op>& ops) {
      if (consume('-')) {
        compile_signed(ops);
        push(ops, {kNegate});
      } else if (consume('+')) {
        compile_signed(ops);
      } else {
        compile_power(ops);
      }
    }

    // power := atom ('^' signed)?, right-associative, signed exponent.
    void compile_power(std::vector<Op>& ops) {
      compile_atom(ops);
      if (consume('^')) {
        compile_signed(ops);
        push(ops, {kPower});
      }
    }

    void compile_atom(std::vector<Op>& ops) {
      skip_space();
      if (pos_ >= text_.size()) fail("expression ends where a value belongs");
      const char c = text_[pos_];
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        compile_number(ops);
      } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        compile_name(ops);
      } else if (consume('(')) {
        compile_sum(ops);
        require_char(')');
      } else {
        fail(std::string("unexpected character '") + c + "'");
      }
    }

    void compile_number(std::vector<Op>& ops) {
      const std::size_t start = pos_;
      while (pos_ < text_.size() &&
             (std::isdigit(static_cast<unsigned char>(text_[pos_])) ||
              text_[pos_] == '.')) {
        ++pos_;
      }
      // An exponent suffix only counts when digits follow; otherwise the
      // letter belongs to the next token (e.g. the constant e).
      if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
        std::size_t probe = pos_ + 1;
        if (probe < text_.size() &&
            (text_[probe] == '+' || text_[probe] == '-')) {
          ++probe;
        }
        if (probe < text_.size() &&
            std::isdigit(static_cast<unsigned char>(text_[probe]))) {
          pos_ = probe;
          while (pos_ < text_.size() &&
                 std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
            ++pos_;
          }
        }
      }
      std::size_t used = 0;
      double value = 0.0;
      const std::string token = text_.substr(start, pos_ - start);
      try {
        value = std::stod(token, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != token.size()) {
        pos_ = start;
        fail("malformed number '" + token + "'");
      }
      push(ops, {kPushConst, value});
    }

    void compile_name(std::vector<Op>& ops) {
      const std::size_t start = pos_;
      while (pos_ < text_.size() &&
             (std::isalnum(static_cast<unsigned char>(text_[pos_])) ||
              text_[pos_] == '_')) {
        ++pos_;
      }
      const std::string name = text_.substr(start, pos_ - start);
      if (name == "k") {
        push(ops, {kPushK});
      } else if (name == "pi") {
        push(ops, {kPushConst, 3.141592653589793238462643383279502884});
      } else if (name == "e") {
        push(ops, {kPushConst, 2.718281828459045235360287471352662498});
      } else if (name == "theta") {
        // theta(i): the index must be a literal positive integer.
        require_char('(');
        skip_space();
        const std::size_t digits = pos_;
        while (pos_ < text_.size() &&
               std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
          ++pos_;
        }
        if (digits == pos_) fail("theta(...) needs a literal index");
        const long index = std::stol(text_.substr(digits, pos_ - digits));
        require_char(')');
        if (index < 1) fail("theta index starts at 1");
        push(ops, {kPushTheta, 0.0, static_cast<Eigen::Index>(index - 1)});
      } else if (name.size() > 5 && name.compare(0, 5, "theta") == 0 &&
                 all_digits(name, 5)) {
        const long index = std::stol(name.substr(5));
        if (index < 1) fail("theta index starts at 1");
        push(ops, {kPushTheta, 0.0, static_cast<Eigen::Index>(index - 1)});
      } else if (Code fn; function_code(name, fn)) {
        require_char('(');
        compile_sum(ops);
        require_char(')');
        push(ops, {fn});
      } else {
        pos_ = start;
        fail("unknown name '" + name + "'");
      }
    }

    static bool all_digits(const std::string& s, std::size_t from) {
      for (std::size_t i = from; i < s.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
      }
      return true;
    }

    static bool function_code(const std::string& name, Code& out) {
      if (name == "sin") out = kSin;
      else if (name == "cos") out = kCos;
      else if (name == "tan") out = kTan;
      else if (name == "atan" || name == "arctan") out = kAtan;
      else if (name == "exp") out = kExp;
      else if (name == "log") out = kLog;
      else if (name == "sqrt") out = kSqrt;
      else if (name == "abs") out = kAbs;
      else return false;
      return true;
    }

    void push(std::vector<Op>& ops, Op op) {
      ops.push_back(op);
      int depth = 0, peak = 0;
      for (const Op& o : ops) {
        if (o.code <= kPushTheta) ++depth;
        else if (o.code >= kAdd && o.code <= kPower) --depth;
        if (depth > peak) peak = depth;
      }
      if (peak > kMaxDepth) fail("expression nests too deeply");
    }

    void skip_space() {
      while (pos_ < text_.size() &&
             std::isspace(static_cast<unsigned char>(text_[pos_]))) {
        ++pos_;
      }
    }

    bool consume(char c) {
      skip_space();
      if (pos_ < text_.size() && text_[pos_] == c) {
        ++pos_;
        return true;
      }
      return false;
    }

    void require_char(char c) {
      if (!consume(c)) fail(std::string("expected '") + c + "'");
    }

    [[noreturn]] void fail(const std::string& message) const {
      detail::require(false, "Expression: " + message + " at column " +
                                 std::to_string(pos_ + 1) + " in \"" + text_ +
                                 "\"");
      std::abort();  // unreachable, require always throws on false
    }

    const std::string& text_;
    std::size_t pos_ = 0;
  };

  std::vector<Op> ops_;
  std::string text_;
};

}  // namespace ellset
