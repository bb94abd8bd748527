#include "urma/tensorgrad.hpp"

#include <Eigen/Dense>
#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace urma::tg {

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ')';
  return out.str();
}

namespace {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != shape_size(shape_))
    throw ShapeError("tensor of shape " + to_string(shape_) + " needs " + std::to_string(shape_size(shape_)) +
                     " values, got " + std::to_string(values_.size()));
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const noexcept {
  if (shape_.size() < 2) return 1;
  std::size_t n = 1;
  for (std::size_t i = 0; i + 1 < shape_.size(); ++i) n *= shape_[i];
  return n;
}

std::size_t Tensor::cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }

double Tensor::item() const {
  if (values_.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
  return values_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

const Tensor& Var::value() const { return tape_->value(*this); }
Tensor Var::grad() const { return tape_->grad(*this); }
bool Var::requires_grad() const { return tape_->requires_grad(*this); }

void Tape::check_owned(Var v) const {
  if (v.tape_ != this) throw std::invalid_argument("var belongs to a different tape");
  if (v.index_ >= nodes_.size()) throw std::out_of_range("var index out of range");
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, false});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, recording(), false});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::push(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (const Var& in : inputs) {
    check_owned(in);
    needs = needs || nodes_[in.index_].requires_grad;
  }
  needs = needs && recording();
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : BackwardFn{}, needs, false});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

const Tensor& Tape::value(Var v) const {
  check_owned(v);
  return nodes_[v.index_].value;
}

Tensor Tape::grad(Var v) const {
  check_owned(v);
  const Node& n = nodes_[v.index_];
  return n.has_grad ? n.grad : Tensor(n.value.shape());
}

bool Tape::requires_grad(Var v) const {
  check_owned(v);
  return nodes_[v.index_].requires_grad;
}

double* Tape::grad_buffer(Var target) {
  check_owned(target);
  Node& n = nodes_[target.index_];
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad.data();
}

void Tape::accumulate(Var target, std::span<const double> contribution) {
  double* g = grad_buffer(target);
  if (!g) return;
  const Node& n = nodes_[target.index_];
  if (contribution.size() != n.value.size())
    throw ShapeError("gradient of size " + std::to_string(contribution.size()) + " for value of shape " +
                     to_string(n.value.shape()));
  for (std::size_t i = 0; i < contribution.size(); ++i) g[i] += contribution[i];
}

void Tape::accumulate(Var target, const Tensor& contribution) { accumulate(target, contribution.values()); }

void Tape::backward(Var output) {
  check_owned(output);
  if (!recording()) throw std::logic_error("backward on an inference tape");
  Node& out = nodes_[output.index_];
  if (out.value.size() != 1)
    throw ShapeError("backward needs a single-element output, got shape " + to_string(out.value.shape()));
  if (!out.requires_grad) return;
  grad_buffer(output)[0] += 1.0;
  for (std::size_t i = output.index_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.has_grad && n.backward) n.backward(*this, n.value, n.grad);
  }
}

// ---------------------------------------------------------------------------------------------

namespace {

enum class Broadcast { same, left_scalar, right_scalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (a.size() == 1) return Broadcast::left_scalar;
  if (b.size() == 1) return Broadcast::right_scalar;
  throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(a.shape()) + " with " + to_string(b.shape()));
}

void accumulate_broadcast(Tape& tape, Var target, bool was_scalar, std::span<const double> g) {
  double* dst = tape.grad_buffer(target);
  if (!dst) return;
  if (!was_scalar) {
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    return;
  }
  double s = 0.0;
  for (double v : g) s += v;
  dst[0] += s;
}

template <class F>
Tensor broadcast_apply(const Tensor& a, const Tensor& b, Broadcast k, F f) {
  Tensor out(k == Broadcast::left_scalar ? b.shape() : a.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = f(k == Broadcast::left_scalar ? a[0] : a[i], k == Broadcast::right_scalar ? b[0] : b[i]);
  return out;
}

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i]);
  return out;
}

inline double fast_tanh(double x) { return 1.0 - 2.0 / (std::exp(2.0 * x) + 1.0); }

double pairwise(const double* v, std::size_t n) {
  if (n == 1) return v[0];
  const std::size_t h = n / 2;
  return pairwise(v, h) + pairwise(v + h, n - h);
}

}  // namespace

double pairwise_sorted_sum(std::span<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  return pairwise(values.data(), values.size());
}

Var add(Var a, Var b) {
  const Broadcast k = broadcast_kind(a.value(), b.value(), "add");
  Tensor out = broadcast_apply(a.value(), b.value(), k, [](double x, double y) { return x + y; });
  return a.tape()->push(std::move(out), {a, b}, [a, b, k](Tape& tape, const Tensor&, const Tensor& g) {
    accumulate_broadcast(tape, a, k == Broadcast::left_scalar, g.values());
    accumulate_broadcast(tape, b, k == Broadcast::right_scalar, g.values());
  });
}

Var sub(Var a, Var b) {
  const Broadcast k = broadcast_kind(a.value(), b.value(), "sub");
  Tensor out = broadcast_apply(a.value(), b.value(), k, [](double x, double y) { return x - y; });
  return a.tape()->push(std::move(out), {a, b}, [a, b, k](Tape& tape, const Tensor&, const Tensor& g) {
    accumulate_broadcast(tape, a, k == Broadcast::left_scalar, g.values());
    if (b.requires_grad()) {
      const Tensor ng = map(g, [](double v) { return -v; });
      accumulate_broadcast(tape, b, k == Broadcast::right_scalar, ng.values());
    }
  });
}

Var mul(Var a, Var b) {
  const Broadcast k = broadcast_kind(a.value(), b.value(), "mul");
  Tensor out = broadcast_apply(a.value(), b.value(), k, [](double x, double y) { return x * y; });
  return a.tape()->push(std::move(out), {a, b}, [a, b, k](Tape& tape, const Tensor&, const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t n = g.size();
    std::vector<double> tmp(n);
    if (a.requires_grad()) {
      for (std::size_t i = 0; i < n; ++i) tmp[i] = g[i] * (k == Broadcast::right_scalar ? bv[0] : bv[i]);
      accumulate_broadcast(tape, a, k == Broadcast::left_scalar, tmp);
    }
    if (b.requires_grad()) {
      for (std::size_t i = 0; i < n; ++i) tmp[i] = g[i] * (k == Broadcast::left_scalar ? av[0] : av[i]);
      accumulate_broadcast(tape, b, k == Broadcast::right_scalar, tmp);
    }
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double s) {
  Tensor out = map(a.value(), [s](double x) { return x * s; });
  return a.tape()->push(std::move(out), {a}, [a, s](Tape& tape, const Tensor&, const Tensor& g) {
    double* ga = tape.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

Var add_scalar(Var a, double s) {
  Tensor out = map(a.value(), [s](double x) { return x + s; });
  return a.tape()->push(std::move(out), {a},
                        [a](Tape& tape, const Tensor&, const Tensor& g) { tape.accumulate(a, g); });
}

Var tanh(Var a) {
  Tensor out = map(a.value(), fast_tanh);
  return a.tape()->push(std::move(out), {a}, [a](Tape& tape, const Tensor& y, const Tensor& g) {
    double* ga = tape.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var exp(Var a) {
  Tensor out = map(a.value(), [](double x) { return std::exp(x); });
  return a.tape()->push(std::move(out), {a}, [a](Tape& tape, const Tensor& y, const Tensor& g) {
    double* ga = tape.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  });
}

Var log(Var a) {
  Tensor out = map(a.value(), [](double x) { return std::log(x); });
  return a.tape()->push(std::move(out), {a}, [a](Tape& tape, const Tensor&, const Tensor& g) {
    double* ga = tape.grad_buffer(a);
    const Tensor& av = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / av[i];
  });
}

Var square(Var a) {
  Tensor out = map(a.value(), [](double x) { return x * x; });
  return a.tape()->push(std::move(out), {a}, [a](Tape& tape, const Tensor&, const Tensor& g) {
    double* ga = tape.grad_buffer(a);
    const Tensor& av = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * g[i] * av[i];
  });
}

Var clamp(Var a, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  Tensor out = map(a.value(), [lo, hi](double x) { return std::clamp(x, lo, hi); });
  return a.tape()->push(std::move(out), {a}, [a, lo, hi](Tape& tape, const Tensor&, const Tensor& g) {
    double* ga = tape.grad_buffer(a);
    const Tensor& av = a.value();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (av[i] >= lo && av[i] <= hi) ga[i] += g[i];
  });
}

Var minimum(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape())
    throw ShapeError("minimum: shapes " + to_string(av.shape()) + " and " + to_string(bv.shape()) + " differ");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] <= bv[i] ? av[i] : bv[i];
  return a.tape()->push(std::move(out), {a, b}, [a, b](Tape& tape, const Tensor&, const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    double* ga = tape.grad_buffer(a);
    double* gb = tape.grad_buffer(b);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] <= bv[i]) {
        if (ga) ga[i] += g[i];
      } else if (gb) {
        gb[i] += g[i];
      }
    }
  });
}

Var elementwise(ElementwiseOp op, std::span<const Var> args, double scalar) {
  const std::size_t need = (op == ElementwiseOp::add || op == ElementwiseOp::mul) ? 2 : 1;
  if (args.size() != need)
    throw std::invalid_argument("elementwise: expected " + std::to_string(need) + " operands, got " +
                                std::to_string(args.size()));
  switch (op) {
    case ElementwiseOp::add: return add(args[0], args[1]);
    case ElementwiseOp::mul: return mul(args[0], args[1]);
    case ElementwiseOp::tanh: return tanh(args[0]);
    case ElementwiseOp::exp: return exp(args[0]);
    case ElementwiseOp::neg: return neg(args[0]);
    case ElementwiseOp::scale: return scale(args[0], scalar);
  }
  throw std::invalid_argument("elementwise: unknown op");
}

// ---------------------------------------------------------------------------------------------

namespace {

// c[m x n] += a[m x k] . b[k x n]; every output accumulates over k in ascending order,
// so a row of c depends only on the matching row of a.
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

// Every output element is one fused multiply-add chain over k in order, in both paths, so a row's result does not
// depend on its position in the matrix.
#if defined(__AVX2__) && defined(__FMA__)
template <int R>
void gemm_block(const double* a, std::size_t k, const double* b, std::size_t n, double* c, std::size_t j0) {
  __m256d acc[R][2];
  for (int r = 0; r < R; ++r) {
    acc[r][0] = _mm256_loadu_pd(c + r * n + j0);
    acc[r][1] = _mm256_loadu_pd(c + r * n + j0 + 4);
  }
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * n + j0), b1 = _mm256_loadu_pd(b + p * n + j0 + 4);
    for (int r = 0; r < R; ++r) {
      const __m256d s = _mm256_broadcast_sd(a + r * k + p);
      acc[r][0] = _mm256_fmadd_pd(s, b0, acc[r][0]);
      acc[r][1] = _mm256_fmadd_pd(s, b1, acc[r][1]);
    }
  }
  for (int r = 0; r < R; ++r) {
    _mm256_storeu_pd(c + r * n + j0, acc[r][0]);
    _mm256_storeu_pd(c + r * n + j0 + 4, acc[r][1]);
  }
}
constexpr std::size_t kVectorColumns = 8;
#else
constexpr std::size_t kVectorColumns = 0;
#endif

/// c (m x n) += a (m x k) * b (k x n), all row-major.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::size_t nb = 0;
#if defined(__AVX2__) && defined(__FMA__)
  nb = n - n % kVectorColumns;
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4)
    for (std::size_t j = 0; j < nb; j += kVectorColumns) gemm_block<4>(a + i * k, k, b, n, c + i * n, j);
  for (; i < m; ++i)
    for (std::size_t j = 0; j < nb; j += kVectorColumns) gemm_block<1>(a + i * k, k, b, n, c + i * n, j);
#endif
  if (nb == n) return;
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = nb; j < n; ++j) {
      double acc = c[r * n + j];
      for (std::size_t p = 0; p < k; ++p) acc = std::fma(a[r * k + p], b[p * n + j], acc);
      c[r * n + j] = acc;
    }
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() < 1 || av.rank() > 2 || bv.rank() != 2 || av.cols() != bv.shape()[0])
    throw ShapeError("matmul: incompatible shapes " + to_string(av.shape()) + " and " + to_string(bv.shape()));
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out(av.rank() == 2 ? Shape{m, n} : Shape{n});
  gemm_acc(av.data(), bv.data(), out.data(), m, k, n);
  return a.tape()->push(std::move(out), {a, b}, [a, b, m, k, n](Tape& tape, const Tensor&, const Tensor& g) {
    if (double* ga = tape.grad_buffer(a))
      MutMap(ga, m, k).noalias() += ConstMap(g.data(), m, n) * ConstMap(b.value().data(), k, n).transpose();
    if (double* gb = tape.grad_buffer(b))
      MutMap(gb, k, n).noalias() += ConstMap(a.value().data(), m, k).transpose() * ConstMap(g.data(), m, n);
  });
}

Var add_rowwise(Var x, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (xv.rank() == 0 || bv.size() != c)
    throw ShapeError("add_rowwise: bias of shape " + to_string(bv.shape()) + " for input " + to_string(xv.shape()));
  Tensor out = xv;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bv[j];
  return x.tape()->push(std::move(out), {x, bias}, [x, bias, r, c](Tape& tape, const Tensor&, const Tensor& g) {
    tape.accumulate(x, g);
    if (double* gb = tape.grad_buffer(bias))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
  });
}

namespace {

constexpr double kLayerNormEps = 1e-5;

struct RowStats {
  std::vector<double> xhat;
  std::vector<double> inv_std;
};

RowStats normalize_rows(const Tensor& x) {
  const std::size_t r = x.rows(), c = x.cols();
  RowStats s{std::vector<double>(x.size()), std::vector<double>(r)};
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = x.data() + i * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += xi[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    s.inv_std[i] = inv;
    for (std::size_t j = 0; j < c; ++j) s.xhat[i * c + j] = (xi[j] - mean) * inv;
  }
  return s;
}

void check_layer_norm_width(const Tensor& x) {
  if (x.rank() == 0 || x.cols() < 2)
    throw ShapeError("layer_norm: normalized width must be at least 2, got shape " + to_string(x.shape()));
}

void layer_norm_input_grad(const RowStats& s, const double* dxhat, double* gx, std::size_t r, std::size_t c) {
  for (std::size_t i = 0; i < r; ++i) {
    const double* d = dxhat + i * c;
    const double* xh = s.xhat.data() + i * c;
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      m1 += d[j];
      m2 += d[j] * xh[j];
    }
    m1 /= static_cast<double>(c);
    m2 /= static_cast<double>(c);
    for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += s.inv_std[i] * (d[j] - m1 - xh[j] * m2);
  }
}

}  // namespace

Var layer_norm(Var x) {
  const Tensor& xv = x.value();
  check_layer_norm_width(xv);
  Tensor out(xv.shape(), normalize_rows(xv).xhat);
  return x.tape()->push(std::move(out), {x}, [x](Tape& tape, const Tensor&, const Tensor& g) {
    const Tensor& xv = x.value();
    layer_norm_input_grad(normalize_rows(xv), g.data(), tape.grad_buffer(x), xv.rows(), xv.cols());
  });
}

Var layer_norm(Var x, Var gain, Var bias) {
  const Tensor& xv = x.value();
  check_layer_norm_width(xv);
  const std::size_t r = xv.rows(), c = xv.cols();
  if (gain.value().size() != c || bias.value().size() != c)
    throw ShapeError("layer_norm: gain " + to_string(gain.value().shape()) + " and bias " +
                     to_string(bias.value().shape()) + " for input " + to_string(xv.shape()));
  const RowStats s = normalize_rows(xv);
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = gv[j] * s.xhat[i * c + j] + bv[j];
  return x.tape()->push(std::move(out), {x, gain, bias},
                        [x, gain, bias, r, c](Tape& tape, const Tensor&, const Tensor& g) {
                          const RowStats s = normalize_rows(x.value());
                          const Tensor& gv = gain.value();
                          if (double* gg = tape.grad_buffer(gain))
                            for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < c; ++j) gg[j] += g[i * c + j] * s.xhat[i * c + j];
                          if (double* gb = tape.grad_buffer(bias))
                            for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
                          if (double* gx = tape.grad_buffer(x)) {
                            std::vector<double> dxhat(r * c);
                            for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < c; ++j) dxhat[i * c + j] = g[i * c + j] * gv[j];
                            layer_norm_input_grad(s, dxhat.data(), gx, r, c);
                          }
                        });
}

Var softmax_with_temperature(Var x, Var tau, double eps) {
  const Tensor& xv = x.value();
  if (tau.value().size() != 1)
    throw ShapeError("softmax_with_temperature: tau must have one element, got " + to_string(tau.value().shape()));
  if (xv.rank() == 0) throw ShapeError("softmax_with_temperature: scalar input");
  const double s = tau.value()[0] + eps;
  if (!(s > 0.0)) throw std::domain_error("softmax_with_temperature: tau + eps must be positive");
  const std::size_t r = xv.rows(), c = xv.cols();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = xv.data() + i * c;
    double* yi = out.data() + i * c;
    double mx = xi[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xi[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      yi[j] = std::exp((xi[j] - mx) / s);
      z += yi[j];
    }
    for (std::size_t j = 0; j < c; ++j) yi[j] /= z;
  }
  return x.tape()->push(std::move(out), {x, tau}, [x, tau, s, r, c](Tape& tape, const Tensor& y, const Tensor& g) {
    // u = x / s; dL/du_j = y_j (g_j - sum_k g_k y_k); dL/dx = dL/du / s; dL/dtau = -sum dL/du * u / s.
    const Tensor& xv = x.value();
    double* gx = tape.grad_buffer(x);
    double gtau = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
      const std::size_t o = i * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[o + j] * y[o + j];
      for (std::size_t j = 0; j < c; ++j) {
        const double du = y[o + j] * (g[o + j] - dot);
        if (gx) gx[o + j] += du / s;
        gtau -= du * xv[o + j] / (s * s);
      }
    }
    if (double* gt = tape.grad_buffer(tau)) gt[0] += gtau;
  });
}

// ---------------------------------------------------------------------------------------------

Var segment_sum(Var x, std::span<const std::uint32_t> segments, std::size_t count) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (xv.rank() != 2) throw ShapeError("segment_sum: expected a matrix, got " + to_string(xv.shape()));
  if (segments.size() != r)
    throw ShapeError("segment_sum: " + std::to_string(segments.size()) + " segment ids for " + std::to_string(r) +
                     " rows");
  std::vector<std::vector<std::uint32_t>> members(count);
  for (std::size_t i = 0; i < r; ++i) {
    if (segments[i] >= count) throw std::out_of_range("segment_sum: segment id out of range");
    members[segments[i]].push_back(static_cast<std::uint32_t>(i));
  }
  Tensor out(Shape{count, c});
  std::vector<double> column;
  for (std::size_t s = 0; s < count; ++s) {
    for (std::size_t j = 0; j < c; ++j) {
      column.clear();
      for (auto i : members[s]) column.push_back(xv[i * c + j]);
      out[s * c + j] = pairwise_sorted_sum(column);
    }
  }
  std::vector<std::uint32_t> seg(segments.begin(), segments.end());
  return x.tape()->push(std::move(out), {x}, [x, seg = std::move(seg), c](Tape& tape, const Tensor&, const Tensor& g) {
    double* gx = tape.grad_buffer(x);
    for (std::size_t i = 0; i < seg.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[seg[i] * c + j];
  });
}

Var reduce_sum_over_set(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw ShapeError("reduce_sum_over_set: expected a matrix, got " + to_string(xv.shape()));
  const std::vector<std::uint32_t> zeros(xv.rows(), 0);
  return reshape(segment_sum(x, zeros, 1), Shape{xv.cols()});
}

Var gather_rows(Var x, std::span<const std::uint32_t> indices) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  Tensor out(Shape{indices.size(), c});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= r)
      throw std::out_of_range("gather_rows: index " + std::to_string(indices[i]) + " for " + std::to_string(r) +
                              " rows");
    std::copy_n(xv.data() + indices[i] * c, c, out.data() + i * c);
  }
  std::vector<std::uint32_t> idx(indices.begin(), indices.end());
  return x.tape()->push(std::move(out), {x}, [x, idx = std::move(idx), c](Tape& tape, const Tensor&, const Tensor& g) {
    double* gx = tape.grad_buffer(x);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) gx[idx[i] * c + j] += g[i * c + j];
  });
}

namespace {

Var concat_pair(Var a, Var b, bool by_cols) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (by_cols) {
    if (av.rows() != bv.rows() || av.rank() != bv.rank())
      throw ShapeError("concat_cols: shapes " + to_string(av.shape()) + " and " + to_string(bv.shape()));
  } else if (av.cols() != bv.cols()) {
    throw ShapeError("concat_rows: shapes " + to_string(av.shape()) + " and " + to_string(bv.shape()));
  }
  const std::size_t r = av.rows(), ca = av.cols(), cb = bv.cols();
  Tensor out;
  if (by_cols) {
    out = Tensor(av.rank() <= 1 ? Shape{ca + cb} : Shape{r, ca + cb});
    for (std::size_t i = 0; i < r; ++i) {
      std::copy_n(av.data() + i * ca, ca, out.data() + i * (ca + cb));
      std::copy_n(bv.data() + i * cb, cb, out.data() + i * (ca + cb) + ca);
    }
  } else {
    out = Tensor(Shape{av.rows() + bv.rows(), ca});
    std::copy_n(av.data(), av.size(), out.data());
    std::copy_n(bv.data(), bv.size(), out.data() + av.size());
  }
  return a.tape()->push(std::move(out), {a, b},
                        [a, b, by_cols, r, ca, cb](Tape& tape, const Tensor&, const Tensor& g) {
                          double* ga = tape.grad_buffer(a);
                          double* gb = tape.grad_buffer(b);
                          if (by_cols) {
                            for (std::size_t i = 0; i < r; ++i) {
                              if (ga)
                                for (std::size_t j = 0; j < ca; ++j) ga[i * ca + j] += g[i * (ca + cb) + j];
                              if (gb)
                                for (std::size_t j = 0; j < cb; ++j) gb[i * cb + j] += g[i * (ca + cb) + ca + j];
                            }
                          } else {
                            const std::size_t na = a.value().size();
                            if (ga)
                              for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
                            if (gb)
                              for (std::size_t i = 0; i < b.value().size(); ++i) gb[i] += g[na + i];
                          }
                        });
}

}  // namespace

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Var out = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) out = concat_pair(out, parts[i], true);
  return out;
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Var out = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) out = concat_pair(out, parts[i], false);
  return out;
}

Var reshape(Var x, Shape shape) {
  const Tensor& xv = x.value();
  if (shape_size(shape) != xv.size())
    throw ShapeError("reshape: " + to_string(xv.shape()) + " to " + to_string(shape));
  Tensor out(std::move(shape), std::vector<double>(xv.values().begin(), xv.values().end()));
  return x.tape()->push(std::move(out), {x}, [x](Tape& tape, const Tensor&, const Tensor& g) {
    tape.accumulate(x, g.values());
  });
}

Var sum_all(Var x) {
  const Tensor& xv = x.value();
  double s = 0.0;
  for (double v : xv.values()) s += v;
  return x.tape()->push(Tensor::scalar(s), {x}, [x](Tape& tape, const Tensor&, const Tensor& g) {
    double* gx = tape.grad_buffer(x);
    const std::size_t n = x.value().size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += g[0];
  });
}

Var mean_all(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw ShapeError("mean_all: empty tensor");
  return scale(sum_all(x), 1.0 / static_cast<double>(n));
}

Var gaussian_logdensity(Var mean, Var std, Var sample) {
  const Tensor& m = mean.value();
  const Tensor& s = std.value();
  const Tensor& x = sample.value();
  if (m.shape() != s.shape() || m.shape() != x.shape())
    throw ShapeError("gaussian_logdensity: mean " + to_string(m.shape()) + ", std " + to_string(s.shape()) +
                     ", sample " + to_string(x.shape()));
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  Tensor out(m.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(s[i] > 0.0)) throw std::domain_error("gaussian_logdensity: std must be positive");
    const double z = (x[i] - m[i]) / s[i];
    out[i] = -0.5 * z * z - std::log(s[i]) - half_log_2pi;
  }
  return mean.tape()->push(std::move(out), {mean, std, sample},
                           [mean, std, sample](Tape& tape, const Tensor&, const Tensor& g) {
                             const Tensor& m = mean.value();
                             const Tensor& s = std.value();
                             const Tensor& x = sample.value();
                             double* gm = tape.grad_buffer(mean);
                             double* gs = tape.grad_buffer(std);
                             double* gx = tape.grad_buffer(sample);
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               const double d = x[i] - m[i];
                               const double inv2 = 1.0 / (s[i] * s[i]);
                               if (gm) gm[i] += g[i] * d * inv2;
                               if (gx) gx[i] -= g[i] * d * inv2;
                               if (gs) gs[i] += g[i] * (d * d * inv2 - 1.0) / s[i];
                             }
                           });
}

Var gaussian_logprob(Var mean, Var std, Var sample) { return sum_all(gaussian_logdensity(mean, std, sample)); }

// ---------------------------------------------------------------------------------------------

GradCheckResult grad_check(const GradCheckFn& f, const std::vector<Tensor>& inputs, double h, double floor) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.leaf(t));
    Var out = f(tape, vars);
    tape.backward(out);
    for (Var v : vars) analytic.push_back(v.grad());
  }
  auto eval = [&](std::vector<Tensor>& xs) {
    Tape tape(Tape::Mode::inference);
    std::vector<Var> vars;
    for (const Tensor& t : xs) vars.push_back(tape.leaf(t));
    return f(tape, vars).value().item();
  };
  GradCheckResult result;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double x0 = probe[k][i];
      probe[k][i] = x0 + h;
      const double fp = eval(probe);
      probe[k][i] = x0 - h;
      const double fm = eval(probe);
      probe[k][i] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (err > result.max_relative_error || !std::isfinite(err)) {
        result = GradCheckResult{std::isfinite(err) ? err : std::numeric_limits<double>::infinity(), k, i, a, numeric};
      }
    }
  }
  return result;
}

double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double h) {
  return grad_check([&f](Tape& t, std::span<const Var> v) { return f(t, v[0]); }, std::vector<Tensor>{x}, h)
      .max_relative_error;
}

}  // namespace urma::tg
