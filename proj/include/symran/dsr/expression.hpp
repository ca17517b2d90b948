#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "symran/core/errors.hpp"
#include "symran/core/tensor.hpp"

namespace symran {

enum class Op : std::uint8_t { add, sub, mul, div, log, exp, var, cst };

inline int arity(Op op) noexcept {
  switch (op) {
    case Op::add:
    case Op::sub:
    case Op::mul:
    case Op::div: return 2;
    case Op::log:
    case Op::exp: return 1;
    default: return 0;
  }
}

inline std::string_view op_symbol(Op op) noexcept {
  switch (op) {
    case Op::add: return "+";
    case Op::sub: return "-";
    case Op::mul: return "*";
    case Op::div: return "/";
    case Op::log: return "log";
    case Op::exp: return "exp";
    case Op::var: return "var";
    case Op::cst: return "const";
  }
  return "?";
}

struct Node {
  Op op = Op::cst;
  int var = 0;
  double value = 0.0;
  bool operator==(const Node&) const = default;
};

namespace protected_ops {

inline constexpr double div_eps = 1e-6;
inline constexpr double log_eps = 1e-9;
inline constexpr double exp_cap = 30.0;
inline constexpr double magnitude_cap = 1e100;

inline double cap(double y) noexcept { return std::clamp(y, -magnitude_cap, magnitude_cap); }

inline double safe_den(double b) noexcept {
  if (std::abs(b) >= div_eps) return b;
  return b >= 0.0 ? div_eps : -div_eps;
}

inline double apply(Op op, double a, double b) noexcept {
  switch (op) {
    case Op::add: return cap(a + b);
    case Op::sub: return cap(a - b);
    case Op::mul: return cap(a * b);
    case Op::div: return cap(a / safe_den(b));
    case Op::log: return std::log(std::abs(a) + log_eps);
    case Op::exp: return std::exp(std::min(a, exp_cap));
    default: return 0.0;
  }
}

}  // namespace protected_ops

inline std::string format_number(double v) {
  if (v == 0.0) return "0";  // also normalizes -0
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string format_short(double v, int significant = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", significant, v);
  return buf;
}

/// Expression over concept variables c0..c{K-1}, stored as a prefix node list.
class ExpressionTree {
 public:
  ExpressionTree() = default;

  explicit ExpressionTree(std::vector<Node> prefix) : nodes_(std::move(prefix)) {
    require(!nodes_.empty(), "ExpressionTree: empty node list");
    index();
  }

  static ExpressionTree variable(int k) { return ExpressionTree({Node{Op::var, k, 0.0}}); }
  static ExpressionTree constant(double v) { return ExpressionTree({Node{Op::cst, 0, v}}); }

  /// Parses the canonical prefix form, e.g. "(+ (log1p c0) (* 1.32 c3))".
  static ExpressionTree parse(std::string_view text) {
    std::vector<std::string> toks = tokenize(text);
    std::vector<Node> out;
    std::size_t pos = 0;
    parse_expr(toks, pos, out);
    if (pos != toks.size()) throw InvalidArgument("expression: trailing tokens after '" + std::string(text) + "'");
    return ExpressionTree(std::move(out));
  }

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }
  int depth() const noexcept { return depth_; }
  bool operator==(const ExpressionTree& o) const { return nodes_ == o.nodes_; }

  /// Largest variable index + 1 (0 when the tree has no variables).
  int variable_span() const noexcept {
    int k = 0;
    for (const Node& n : nodes_)
      if (n.op == Op::var) k = std::max(k, n.var + 1);
    return k;
  }

  std::size_t num_constants() const noexcept { return const_idx_.size(); }

  Vector constants() const {
    Vector c;
    for (std::size_t i : const_idx_) c.push_back(nodes_[i].value);
    return c;
  }

  void set_constants(std::span<const double> c) {
    require_dim(c.size() == const_idx_.size(), "set_constants: size mismatch");
    for (std::size_t j = 0; j < c.size(); ++j) {
      if (!std::isfinite(c[j])) throw NumericError("set_constants: non-finite constant");
      nodes_[const_idx_[j]].value = c[j];
    }
  }

  double eval(std::span<const double> c) const {
    require(!nodes_.empty(), "eval_expression: empty tree");
    if (variable_span() > static_cast<int>(c.size()))
      throw DimensionError("eval_expression: concept vector too short for tree variables");
    return eval_at(0, c);
  }

  /// Evaluates on every row of X (N x K).
  void eval_batch(const Matrix& X, Vector& out) const {
    eval_batch_impl(X, out, nullptr);
  }

  /// Evaluates on every row of X and fills d out / d constants (N x num_constants).
  void eval_batch_with_jacobian(const Matrix& X, Vector& out, Matrix& jac) const {
    eval_batch_impl(X, out, &jac);
  }

  std::string to_prefix() const {
    std::string s;
    print_prefix(0, s);
    return s;
  }

  std::string to_infix(int significant = 4) const {
    return print_infix(0, significant);
  }

  /// Subtree span [i, end) of the node at i.
  std::size_t subtree_end(std::size_t i) const { return end_[i]; }
  std::size_t first_child(std::size_t i) const { return i + 1; }
  std::size_t second_child(std::size_t i) const { return end_[i + 1]; }

  /// True when node i is log applied to (+ 1 x), printed as log1p.
  bool is_log1p(std::size_t i) const {
    if (nodes_[i].op != Op::log || i + 1 >= nodes_.size()) return false;
    const Node& add = nodes_[i + 1];
    return add.op == Op::add && nodes_[i + 2].op == Op::cst && nodes_[i + 2].value == 1.0;
  }

 private:
  std::vector<Node> nodes_;
  std::vector<std::size_t> end_;
  std::vector<std::size_t> const_idx_;
  int depth_ = 0;

  void index() {
    end_.assign(nodes_.size(), 0);
    const_idx_.clear();
    std::vector<int> depth_of(nodes_.size(), 0);
    // Reverse scan: a stack of completed subtree end positions.
    std::vector<std::size_t> stack;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      const Node& n = nodes_[i];
      const int ar = arity(n.op);
      if (n.op == Op::var && n.var < 0) throw InvalidArgument("expression: negative variable index");
      if (n.op == Op::cst && !std::isfinite(n.value)) throw InvalidArgument("expression: non-finite constant");
      if (static_cast<int>(stack.size()) < ar) throw InvalidArgument("expression: operator is missing operands");
      if (ar == 0) {
        end_[i] = i + 1;
        depth_of[i] = 1;
      } else {
        std::size_t last = i + 1;
        int d = 0;
        for (int a = 0; a < ar; ++a) {
          const std::size_t child = stack.back();
          stack.pop_back();
          d = std::max(d, depth_of[child]);
          last = end_[child];
        }
        end_[i] = last;
        depth_of[i] = d + 1;
      }
      stack.push_back(i);
    }
    if (stack.size() != 1 || stack.back() != 0)
      throw InvalidArgument("expression: node list is not a single complete tree");
    depth_ = depth_of[0];
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].op == Op::cst) const_idx_.push_back(i);
  }

  double eval_at(std::size_t i, std::span<const double> c) const {
    const Node& n = nodes_[i];
    switch (n.op) {
      case Op::var: return c[static_cast<std::size_t>(n.var)];
      case Op::cst: return n.value;
      case Op::log:
      case Op::exp: return protected_ops::apply(n.op, eval_at(i + 1, c), 0.0);
      default: return protected_ops::apply(n.op, eval_at(i + 1, c), eval_at(end_[i + 1], c));
    }
  }

  void eval_batch_impl(const Matrix& X, Vector& out, Matrix* jac) const {
    require(!nodes_.empty(), "eval_expression: empty tree");
    if (variable_span() > static_cast<int>(X.cols()))
      throw DimensionError("eval_expression: dataset has fewer columns than tree variables");
    const std::size_t N = X.rows(), n = nodes_.size(), nc = const_idx_.size();
    std::vector<double> val(n * N);
    std::vector<double> der;  // (node, const, point)
    if (jac) der.assign(n * nc * N, 0.0);
    std::vector<std::size_t> cpos(n, 0);
    for (std::size_t j = 0; j < nc; ++j) cpos[const_idx_[j]] = j;
    using namespace protected_ops;
    for (std::size_t i = n; i-- > 0;) {
      const Node& nd = nodes_[i];
      double* v = val.data() + i * N;
      double* dv = jac ? der.data() + i * nc * N : nullptr;
      switch (nd.op) {
        case Op::var:
          for (std::size_t p = 0; p < N; ++p) v[p] = X(p, static_cast<std::size_t>(nd.var));
          break;
        case Op::cst:
          std::fill(v, v + N, nd.value);
          if (dv) std::fill(dv + cpos[i] * N, dv + (cpos[i] + 1) * N, 1.0);
          break;
        case Op::log:
        case Op::exp: {
          const std::size_t a = i + 1;
          const double* va = val.data() + a * N;
          const double* da = jac ? der.data() + a * nc * N : nullptr;
          for (std::size_t p = 0; p < N; ++p) {
            const double x = va[p];
            double g;
            if (nd.op == Op::log) {
              v[p] = std::log(std::abs(x) + log_eps);
              g = (x >= 0.0 ? 1.0 : -1.0) / (std::abs(x) + log_eps);
            } else if (x > exp_cap) {
              v[p] = std::exp(exp_cap);
              g = 0.0;
            } else {
              v[p] = std::exp(x);
              g = v[p];
            }
            if (dv)
              for (std::size_t j = 0; j < nc; ++j) dv[j * N + p] = g * da[j * N + p];
          }
          break;
        }
        default: {
          const std::size_t a = i + 1, b = end_[i + 1];
          const double* va = val.data() + a * N;
          const double* vb = val.data() + b * N;
          const double* da = jac ? der.data() + a * nc * N : nullptr;
          const double* db = jac ? der.data() + b * nc * N : nullptr;
          for (std::size_t p = 0; p < N; ++p) {
            const double x = va[p], y = vb[p];
            double r, ga, gb;
            switch (nd.op) {
              case Op::add: r = x + y; ga = 1; gb = 1; break;
              case Op::sub: r = x - y; ga = 1; gb = -1; break;
              case Op::mul: r = x * y; ga = y; gb = x; break;
              default: {
                const double den = safe_den(y);
                r = x / den;
                ga = 1.0 / den;
                gb = std::abs(y) >= div_eps ? -r / den : 0.0;
              }
            }
            if (std::abs(r) > magnitude_cap) {
              r = cap(r);
              ga = gb = 0.0;
            }
            v[p] = r;
            if (dv)
              for (std::size_t j = 0; j < nc; ++j) dv[j * N + p] = ga * da[j * N + p] + gb * db[j * N + p];
          }
        }
      }
    }
    out.assign(val.begin(), val.begin() + static_cast<std::ptrdiff_t>(N));
    if (jac) {
      *jac = Matrix(N, nc);
      for (std::size_t p = 0; p < N; ++p)
        for (std::size_t j = 0; j < nc; ++j) (*jac)(p, j) = der[j * N + p];
    }
  }

  void print_prefix(std::size_t i, std::string& s) const {
    const Node& n = nodes_[i];
    if (n.op == Op::var) {
      s += "c" + std::to_string(n.var);
      return;
    }
    if (n.op == Op::cst) {
      s += format_number(n.value);
      return;
    }
    if (is_log1p(i)) {
      s += "(log1p ";
      print_prefix(i + 3, s);
      s += ")";
      return;
    }
    s += "(";
    s += op_symbol(n.op);
    s += " ";
    print_prefix(i + 1, s);
    if (arity(n.op) == 2) {
      s += " ";
      print_prefix(end_[i + 1], s);
    }
    s += ")";
  }

  static int precedence(Op op) {
    switch (op) {
      case Op::add:
      case Op::sub: return 1;
      case Op::mul:
      case Op::div: return 2;
      default: return 3;
    }
  }

  std::string print_infix(std::size_t i, int sig) const {
    const Node& n = nodes_[i];
    if (n.op == Op::var) return "c" + std::to_string(n.var);
    if (n.op == Op::cst) return format_short(n.value, sig);
    if (is_log1p(i)) return "log(1 + " + print_infix(i + 3, sig) + ")";
    if (arity(n.op) == 1) return std::string(op_symbol(n.op)) + "(" + print_infix(i + 1, sig) + ")";
    const std::size_t a = i + 1, b = end_[i + 1];
    const int p = precedence(n.op);
    std::string l = print_infix(a, sig), r = print_infix(b, sig);
    const int pa = precedence(nodes_[a].op), pb = precedence(nodes_[b].op);
    if (pa < p) l = "(" + l + ")";
    if (pb < p || (pb == p && (n.op == Op::sub || n.op == Op::div))) r = "(" + r + ")";
    return l + " " + std::string(op_symbol(n.op)) + " " + r;
  }

  static std::vector<std::string> tokenize(std::string_view t) {
    std::vector<std::string> toks;
    std::string cur;
    for (char ch : t) {
      if (ch == '(' || ch == ')' || std::isspace(static_cast<unsigned char>(ch))) {
        if (!cur.empty()) toks.push_back(std::move(cur)), cur.clear();
        if (ch != ' ' && ch != '\t' && ch != '\n' && ch != '\r') toks.emplace_back(1, ch);
      } else {
        cur += ch;
      }
    }
    if (!cur.empty()) toks.push_back(cur);
    return toks;
  }

  static void parse_expr(const std::vector<std::string>& toks, std::size_t& pos, std::vector<Node>& out) {
    if (pos >= toks.size()) throw InvalidArgument("expression: unexpected end of input");
    const std::string& tok = toks[pos++];
    if (tok == "(") {
      if (pos >= toks.size()) throw InvalidArgument("expression: unexpected end of input");
      const std::string head = toks[pos++];
      if (head == "log1p") {
        out.push_back({Op::log, 0, 0.0});
        out.push_back({Op::add, 0, 0.0});
        out.push_back({Op::cst, 0, 1.0});
        parse_expr(toks, pos, out);
      } else {
        Op op;
        if (head == "+") op = Op::add;
        else if (head == "-") op = Op::sub;
        else if (head == "*") op = Op::mul;
        else if (head == "/") op = Op::div;
        else if (head == "log") op = Op::log;
        else if (head == "exp") op = Op::exp;
        else throw InvalidArgument("expression: unknown operator '" + head + "'");
        out.push_back({op, 0, 0.0});
        for (int a = 0; a < arity(op); ++a) parse_expr(toks, pos, out);
      }
      if (pos >= toks.size() || toks[pos] != ")") throw InvalidArgument("expression: expected ')'");
      ++pos;
      return;
    }
    if (tok == ")") throw InvalidArgument("expression: unexpected ')'");
    if (tok.size() > 1 && tok[0] == 'c' && std::all_of(tok.begin() + 1, tok.end(), ::isdigit)) {
      out.push_back({Op::var, std::stoi(tok.substr(1)), 0.0});
      return;
    }
    double v = 0.0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
      throw InvalidArgument("expression: bad token '" + tok + "'");
    out.push_back({Op::cst, 0, v});
  }
};

}  // namespace symran
