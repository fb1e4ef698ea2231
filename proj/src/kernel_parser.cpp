#include "gradkernel/kernel_parser.hpp"

#include <cctype>
#include <charconv>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "gradkernel/errors.hpp"

namespace gradkernel {

namespace {

struct Value {
  std::size_t pos = 0;
  std::optional<double> number;
  std::vector<Value> items;  // list entries when number is empty
};

struct Arg {
  std::size_t pos = 0;
  std::string key;  // empty for positional arguments
  std::optional<KernelExpr> kernel;
  std::optional<Value> value;
};

class Parser {
 public:
  explicit Parser(std::string_view s) : s_(s) {}

  KernelExpr parse() {
    KernelExpr k = call();
    skip();
    if (i_ != s_.size()) fail("unexpected trailing input");
    return k;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, i_); }
  [[noreturn]] static void fail_at(const std::string& msg, std::size_t pos) { throw ParseError(msg, pos); }

  void skip() {
    while (i_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[i_]))) ++i_;
  }
  bool peek(char c) {
    skip();
    return i_ < s_.size() && s_[i_] == c;
  }
  void expect(char c) {
    if (!peek(c)) fail(std::string("expected '") + c + "'");
    ++i_;
  }
  bool name_char(char c) const { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
  bool at_name() {
    skip();
    return i_ < s_.size() && (std::isalpha(static_cast<unsigned char>(s_[i_])) || s_[i_] == '_');
  }

  std::string name() {
    skip();
    const std::size_t b = i_;
    while (i_ < s_.size() && name_char(s_[i_])) ++i_;
    if (b == i_) fail("expected a name");
    return std::string(s_.substr(b, i_ - b));
  }

  Value value() {
    skip();
    Value v;
    v.pos = i_;
    if (peek('[')) {
      ++i_;
      if (!peek(']')) {
        v.items.push_back(value());
        while (peek(',')) {
          ++i_;
          v.items.push_back(value());
        }
      }
      expect(']');
      return v;
    }
    double x = 0.0;
    const char* b = s_.data() + i_;
    const char* e = s_.data() + s_.size();
    if (b != e && *b == '+') ++b;
    auto [p, ec] = std::from_chars(b, e, x);
    if (ec != std::errc() || p == b) fail("expected a number");
    i_ = static_cast<std::size_t>(p - s_.data());
    v.number = x;
    return v;
  }

  Arg arg() {
    skip();
    Arg a;
    a.pos = i_;
    if (at_name()) {
      const std::size_t save = i_;
      std::string n = name();
      if (peek('=')) {
        ++i_;
        a.key = std::move(n);
        a.value = value();
        return a;
      }
      i_ = save;
      a.kernel = call();
      return a;
    }
    a.value = value();
    return a;
  }

  KernelExpr call() {
    skip();
    const std::size_t pos = i_;
    const std::string fn = name();
    std::vector<Arg> args;
    if (peek('(')) {
      ++i_;
      if (!peek(')')) {
        args.push_back(arg());
        while (peek(',')) {
          ++i_;
          args.push_back(arg());
        }
      }
      expect(')');
    }
    return build(fn, pos, args);
  }

  // -- argument access ------------------------------------------------------

  struct Args {
    const std::string& fn;
    std::size_t pos;
    std::vector<Arg>& list;
    std::vector<bool> used = std::vector<bool>(list.size(), false);

    std::vector<KernelExpr> kernels() {
      std::vector<KernelExpr> out;
      for (std::size_t j = 0; j < list.size(); ++j)
        if (list[j].kernel) {
          out.push_back(*list[j].kernel);
          used[j] = true;
        }
      return out;
    }
    KernelExpr one_kernel() {
      auto ks = kernels();
      if (ks.size() != 1) fail_at(fn + " takes exactly one kernel argument", pos);
      return ks[0];
    }
    // Named value `key`, else the next unused positional value.
    const Value* find(const std::string& key) {
      for (std::size_t j = 0; j < list.size(); ++j)
        if (!used[j] && list[j].key == key) {
          used[j] = true;
          return &*list[j].value;
        }
      for (std::size_t j = 0; j < list.size(); ++j)
        if (!used[j] && list[j].key.empty() && list[j].value) {
          used[j] = true;
          return &*list[j].value;
        }
      return nullptr;
    }
    double number(const std::string& key, std::optional<double> fallback = std::nullopt) {
      const Value* v = find(key);
      if (!v) {
        if (!fallback) fail_at(fn + " requires parameter '" + key + "'", pos);
        return *fallback;
      }
      if (!v->number) fail_at("parameter '" + key + "' must be a number", v->pos);
      return *v->number;
    }
    VectorXd vector(const std::string& key) {
      const Value* v = find(key);
      if (!v) fail_at(fn + " requires parameter '" + key + "'", pos);
      return to_vector(*v, key);
    }
    MatrixXd matrix(const std::string& key) {
      const Value* v = find(key);
      if (!v) fail_at(fn + " requires parameter '" + key + "'", pos);
      if (v->number || v->items.empty()) fail_at("parameter '" + key + "' must be a list of rows", v->pos);
      const VectorXd first = to_vector(v->items[0], key);
      MatrixXd M(static_cast<Index>(v->items.size()), first.size());
      for (std::size_t r = 0; r < v->items.size(); ++r) {
        const VectorXd row = to_vector(v->items[r], key);
        if (row.size() != first.size()) fail_at("ragged rows in '" + key + "'", v->items[r].pos);
        M.row(static_cast<Index>(r)) = row.transpose();
      }
      return M;
    }
    static VectorXd to_vector(const Value& v, const std::string& key) {
      if (v.number || v.items.empty()) fail_at("parameter '" + key + "' must be a nonempty list", v.pos);
      VectorXd out(static_cast<Index>(v.items.size()));
      for (std::size_t j = 0; j < v.items.size(); ++j) {
        if (!v.items[j].number) fail_at("parameter '" + key + "' must hold numbers", v.items[j].pos);
        out(static_cast<Index>(j)) = *v.items[j].number;
      }
      return out;
    }
    void done() const {
      for (std::size_t j = 0; j < list.size(); ++j)
        if (!used[j])
          fail_at(list[j].key.empty() ? "unexpected argument to " + fn : "unknown parameter '" + list[j].key + "' for " + fn,
                  list[j].pos);
    }
  };

  static std::vector<double> std_vector(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

  KernelExpr build(const std::string& fn, std::size_t pos, std::vector<Arg>& list) {
    Args a{fn, pos, list};
    auto leaf = [&](KernelExpr k) {
      a.done();
      return k;
    };
    try {
      if (fn == "rbf") return leaf(rbf());
      if (fn == "matern52") return leaf(matern52());
      if (fn == "expdot") return leaf(exp_dot());
      if (fn == "nn") return leaf(neural_network());
      if (fn == "rbfnet") return leaf(rbf_network());
      if (fn == "rq") return leaf(rational_quadratic(a.number("alpha", 2.0)));
      if (fn == "poly") {
        const double degree = a.number("degree", 2.0);
        return leaf(polynomial(degree, a.number("c", 1.0)));
      }
      if (fn == "dot") return leaf(dot(a.number("c", 0.0)));
      if (fn == "cosine") return leaf(cosine(a.vector("w")));
      if (fn == "qmix") return leaf(quadratic_mixture(a.number("c", 1.0)));
      if (fn == "sm") {
        const VectorXd w = a.vector("w"), l = a.vector("l");
        const MatrixXd mu = a.matrix("mu");
        if (w.size() != l.size() || mu.rows() != w.size())
          fail_at("sm needs as many weights, lengthscales and frequency rows", pos);
        std::vector<VectorXd> freqs;
        for (Index q = 0; q < mu.rows(); ++q) freqs.emplace_back(mu.row(q).transpose());
        return leaf(spectral_mixture(std_vector(w), std_vector(l), freqs));
      }
      if (fn == "sum" || fn == "prod" || fn == "dsum" || fn == "dprod") {
        auto ks = a.kernels();
        a.done();
        if (ks.empty()) fail_at(fn + " needs at least one kernel", pos);
        if (fn == "sum") return sum(std::move(ks));
        if (fn == "prod") return product(std::move(ks));
        if (fn == "dsum") return direct_sum(std::move(ks));
        return direct_product(std::move(ks));
      }
      if (fn == "scale") {
        KernelExpr k = a.one_kernel();
        return leaf(scale(a.number("a"), std::move(k)));
      }
      if (fn == "pow") {
        KernelExpr k = a.one_kernel();
        return leaf(chain(ScalarFunction::power(a.number("p")), std::move(k)));
      }
      if (fn == "exp") {
        KernelExpr k = a.one_kernel();
        return leaf(chain(ScalarFunction::exponential(), std::move(k)));
      }
      if (fn == "ard") {
        KernelExpr k = a.one_kernel();
        return leaf(ard(a.vector("l"), std::move(k)));
      }
      if (fn == "lwarp") {
        KernelExpr k = a.one_kernel();
        return leaf(linear_warp(a.matrix("U"), std::move(k)));
      }
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      fail_at(std::string(e.what()), pos);
    }
    fail_at("unknown kernel '" + fn + "'", pos);
  }

  std::string_view s_;
  std::size_t i_ = 0;
};

}  // namespace

KernelExpr parse_kernel(std::string_view text) { return Parser(text).parse(); }

}  // namespace gradkernel
