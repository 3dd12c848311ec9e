#include "lcrank/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace lcrank {

std::int64_t Rng::uniform_int(std::int64_t n) {
  if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  const std::uint64_t bound = UINT64_MAX - UINT64_MAX % un;
  std::uint64_t v = next_u64();
  while (v >= bound) v = next_u64();
  return static_cast<std::int64_t>(v % un);
}

double Rng::gaussian(double mean, double sd) {
  // Box-Muller; two uniforms per sample, no caching.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return mean + sd * r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

double Rng::log_uniform(double lo, double hi) {
  if (!(lo > 0.0) || !(hi > lo)) throw std::invalid_argument("Rng::log_uniform: need 0 < lo < hi");
  return std::pow(10.0, uniform(std::log10(lo), std::log10(hi)));
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    if (d <= 0) throw std::invalid_argument("tensor shape has non-positive dimension " + shape_str(s));
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape s, std::vector<double> v, bool rg) : shape(std::move(s)), values(std::move(v)) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw std::invalid_argument("tensor value count " + std::to_string(values.size()) +
                                " does not match shape " + shape_str(shape));
  }
  set_requires_grad(rg);
}

Tensor Tensor::zeros(Shape s, bool rg) {
  const auto n = shape_numel(s);
  return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), 0.0), rg);
}

Tensor Tensor::full(Shape s, double v, bool rg) {
  const auto n = shape_numel(s);
  return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), v), rg);
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::row(std::vector<double> v) {
  const int n = static_cast<int>(v.size());
  return Tensor({1, n}, std::move(v));
}

Tensor Tensor::column(std::vector<double> v) {
  const int n = static_cast<int>(v.size());
  return Tensor({n, 1}, std::move(v));
}

Tensor Tensor::matrix(int r, int c, std::vector<double> v) { return Tensor({r, c}, std::move(v)); }

void Tensor::set_requires_grad(bool rg) {
  requires_grad = rg;
  if (rg) {
    grad.assign(values.size(), 0.0);
  } else {
    grad.clear();
  }
}

void Tensor::zero_grad() {
  if (requires_grad) grad.assign(values.size(), 0.0);
}

bool Tensor::all_finite() const {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor glorot_uniform(Shape s, int fan_in, int fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  return uniform_init(std::move(s), -bound, bound, rng);
}

Tensor uniform_init(Shape s, double lo, double hi, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(s), true);
  for (double& v : t.values) v = rng.uniform(lo, hi);
  return t;
}

// ---------------------------------------------------------------------------
// Graph

Var Graph::emplace(Tensor out, std::function<void(Graph&)> bp) {
  nodes_.push_back(Node{std::move(out), {}, nullptr, std::move(bp)});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

std::vector<double>& Graph::grad_buf(int id) {
  auto& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() != n.out.values.size()) n.grad.assign(n.out.values.size(), 0.0);
  return n.grad;
}

void Graph::check(Var v) const {
  if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
    throw std::invalid_argument("graph: invalid node handle");
  }
}

Var Graph::constant(Tensor t) { return emplace(std::move(t), nullptr); }

Var Graph::leaf(Tensor& param) {
  Var v = emplace(param, nullptr);
  nodes_.back().bound = &param;
  return v;
}

const Tensor& Graph::value(Var v) const {
  check(v);
  return nodes_[static_cast<std::size_t>(v.id)].out;
}

const std::vector<double>& Graph::grad(Var v) const {
  check(v);
  return nodes_[static_cast<std::size_t>(v.id)].grad;
}

namespace {

enum class EwKind { Add, Sub, Mul };

const char* ew_name(EwKind k) {
  switch (k) {
    case EwKind::Add: return "add";
    case EwKind::Sub: return "sub";
    default: return "mul";
  }
}

}  // namespace

Var Graph::add(Var a, Var b) { return elementwise_(a, b, static_cast<int>(EwKind::Add)); }
Var Graph::sub(Var a, Var b) { return elementwise_(a, b, static_cast<int>(EwKind::Sub)); }
Var Graph::mul(Var a, Var b) { return elementwise_(a, b, static_cast<int>(EwKind::Mul)); }

Var Graph::elementwise_(Var a, Var b, int kind_tag) {
  const EwKind kind = static_cast<EwKind>(kind_tag);
  check(a);
  check(b);
  const Tensor& av = out_of(a.id);
  const Tensor& bv = out_of(b.id);
  const bool a_scalar = av.numel() == 1;
  const bool b_scalar = bv.numel() == 1;
  if (av.shape != bv.shape && !a_scalar && !b_scalar) {
    throw std::invalid_argument(std::string(ew_name(kind)) + ": shape mismatch " + shape_str(av.shape) +
                                " vs " + shape_str(bv.shape));
  }
  const Tensor& big = (a_scalar && !b_scalar) ? bv : av;
  Tensor out = Tensor::zeros(big.shape);
  const std::size_t n = out.values.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av.values[a_scalar ? 0 : i];
    const double y = bv.values[b_scalar ? 0 : i];
    out.values[i] = kind == EwKind::Add ? x + y : kind == EwKind::Sub ? x - y : x * y;
  }
  const int ai = a.id, bi = b.id;
  const int self = static_cast<int>(nodes_.size());
  return emplace(std::move(out), [=](Graph& g) {
    const auto& gout = g.nodes_[self].grad;
    const auto& va = g.out_of(ai).values;
    const auto& vb = g.out_of(bi).values;
    auto& ga = g.grad_buf(ai);
    auto& gb = g.grad_buf(bi);
    for (std::size_t i = 0; i < gout.size(); ++i) {
      const double go = gout[i];
      switch (kind) {
        case EwKind::Add:
          ga[a_scalar ? 0 : i] += go;
          gb[b_scalar ? 0 : i] += go;
          break;
        case EwKind::Sub:
          ga[a_scalar ? 0 : i] += go;
          gb[b_scalar ? 0 : i] -= go;
          break;
        case EwKind::Mul:
          ga[a_scalar ? 0 : i] += go * vb[b_scalar ? 0 : i];
          gb[b_scalar ? 0 : i] += go * va[a_scalar ? 0 : i];
          break;
      }
    }
  });
}

Var Graph::add_rows(Var x, Var row) {
  check(x);
  check(row);
  const Tensor& xv = out_of(x.id);
  const Tensor& rv = out_of(row.id);
  if (xv.rank() != 2 || rv.rank() != 2 || rv.rows() != 1 || rv.cols() != xv.cols()) {
    throw std::invalid_argument("add_rows: need [BxH] + [1xH], got " + shape_str(xv.shape) + " and " +
                                shape_str(rv.shape));
  }
  const int B = xv.rows(), H = xv.cols();
  Tensor out = Tensor::zeros(xv.shape);
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < H; ++j) out.at(i, j) = xv.at(i, j) + rv.values[static_cast<std::size_t>(j)];
  const int xi = x.id, ri = row.id;
  const int self = static_cast<int>(nodes_.size());
  return emplace(std::move(out), [=](Graph& g) {
    const auto& gout = g.nodes_[self].grad;
    auto& gx = g.grad_buf(xi);
    auto& gr = g.grad_buf(ri);
    for (int i = 0; i < B; ++i)
      for (int j = 0; j < H; ++j) {
        const double go = gout[static_cast<std::size_t>(i) * H + j];
        gx[static_cast<std::size_t>(i) * H + j] += go;
        gr[static_cast<std::size_t>(j)] += go;
      }
  });
}

Var Graph::scale(Var x, double s) {
  check(x);
  const Tensor& xv = out_of(x.id);
  Tensor out = Tensor::zeros(xv.shape);
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = s * xv.values[i];
  const int xi = x.id;
  const int self = static_cast<int>(nodes_.size());
  return emplace(std::move(out), [=](Graph& g) {
    const auto& gout = g.nodes_[self].grad;
    auto& gx = g.grad_buf(xi);
    for (std::size_t i = 0; i < gout.size(); ++i) gx[i] += s * gout[i];
  });
}

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var Graph::tanh(Var x) {
  check(x);
  const Tensor& xv = out_of(x.id);
  Tensor out = Tensor::zeros(xv.shape);
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = std::tanh(xv.values[i]);
  const int xi = x.id;
  const int self = static_cast<int>(nodes_.size());
  return emplace(std::move(out), [=](Graph& g) {
    const auto& gout = g.nodes_[self].grad;
    const auto& y = g.nodes_[self].out.values;
    auto& gx = g.grad_buf(xi);
    for (std::size_t i = 0; i < gout.size(); ++i) gx[i] += gout[i] * (1.0 - y[i] * y[i]);
  });
}

Var Graph::sigmoid(Var x) {
  check(x);
  const Tensor& xv = out_of(x.id);
  Tensor out = Tensor::zeros(xv.shape);
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = stable_sigmoid(xv.values[i]);
  const int xi = x.id;
  const int self = static_cast<int>(nodes_.size());
  return emplace(std::move(out), [=](Graph& g) {
    const auto& gout = g.nodes_[self].grad;
    const auto& y = g.nodes_[self].out.values;
    auto& gx = g.grad_buf(xi);
    for (std::size_t i = 0; i < gout.size(); ++i) gx[i] += gout[i] * y[i] * (1.0 - y[i]);
  });
}

Var Graph::exp(Var x) {
  check(x);
  const Tensor& xv = out_of(x.id);
  Tensor out = Tensor::zeros(xv.shape);
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = std::exp(xv.values[i]);
  const int xi = x.id;
  const int self = static_cast<int>(nodes_.size());
  return emplace(std::move(out), [=](Graph& g) {
    const auto& gout = g.nodes_[self].grad;
    const auto& y = g.nodes_[self].out.values;
    auto& gx = g.grad_buf(xi);
    for (std::size_t i = 0; i < gout.size(); ++i) gx[i] += gout[i] * y[i];
  });
}

Var Graph::log(Var x) {
  check(x);
  const Tensor& xv = out_of(x.id);
  Tensor out = Tensor::zeros(xv.shape);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    if (!(xv.values[i] > 0.0)) {
      throw std::domain_error("log: non-positive input " + std::to_string(xv.values[i]) + " at index " +
                              std::to_string(i));
    }
    out.values[i] = std::log(xv.values[i]);
  }
  const int xi = x.id;
  const int self = static_cast<int>(nodes_.size());
  return emplace(std::move(out), [=](Graph& g) {
    const auto& gout = g.nodes_[self].grad;
    const auto& vx = g.out_of(xi).values;
    auto& gx = g.grad_buf(xi);
    for (std::size_t i = 0; i < gout.size(); ++i) gx[i] += gout[i] / vx[i];
  });
}

Var Graph::clamp(Var x, double lo, double hi) {
  check(x);
  if (!(lo < hi)) throw std::invalid_argument("clamp: lo must be < hi");
  const Tensor& xv = out_of(x.id);
  Tensor out = Tensor::zeros(xv.shape);
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = std::min(hi, std::max(lo, xv.values[i]));
  const int xi = x.id;
  const int self = static_cast<int>(nodes_.size());
  return emplace(std::move(out), [=](Graph& g) {
    const auto& gout = g.nodes_[self].grad;
    const auto& vx = g.out_of(xi).values;
    auto& gx = g.grad_buf(xi);
    for (std::size_t i = 0; i < gout.size(); ++i) {
      if (vx[i] > lo && vx[i] < hi) gx[i] += gout[i];
    }
  });
}

Var Graph::matmul(Var a, Var b) {
  check(a);
  check(b);
  const Tensor& av = out_of(a.id);
  const Tensor& bv = out_of(b.id);
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw std::invalid_argument("matmul: dimension mismatch " + shape_str(av.shape) + " vs " +
                                shape_str(bv.shape));
  }
  const int m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out = Tensor::zeros({m, n});
  for (int i = 0; i < m; ++i) {
    const double* arow = av.values.data() + static_cast<std::size_t>(i) * k;
    double* orow = out.values.data() + static_cast<std::size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const double aik = arow[kk];
      const double* brow = bv.values.data() + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  const int ai = a.id, bi = b.id;
  const int self = static_cast<int>(nodes_.size());
  return emplace(std::move(out), [=](Graph& g) {
    const auto& gout = g.nodes_[self].grad;
    const auto& va = g.out_of(ai).values;
    const auto& vb = g.out_of(bi).values;
    auto& ga = g.grad_buf(ai);
    auto& gb = g.grad_buf(bi);
    // dA = G . B^T
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        const double go = gout[static_cast<std::size_t>(i) * n + j];
        if (go == 0.0) continue;
        for (int kk = 0; kk < k; ++kk) ga[static_cast<std::size_t>(i) * k + kk] += go * vb[static_cast<std::size_t>(kk) * n + j];
      }
    // dB = A^T . G
    for (int kk = 0; kk < k; ++kk)
      for (int i = 0; i < m; ++i) {
        const double aik = va[static_cast<std::size_t>(i) * k + kk];
        if (aik == 0.0) continue;
        const double* grow = gout.data() + static_cast<std::size_t>(i) * n;
        double* brow = gb.data() + static_cast<std::size_t>(kk) * n;
        for (int j = 0; j < n; ++j) brow[j] += aik * grow[j];
      }
  });
}

Var Graph::concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  for (Var p : parts) check(p);
  const Tensor& first = out_of(parts[0].id);
  const int rank = first.rank();
  if (rank < 1 || rank > 2 || axis < 0 || axis >= rank) {
    throw std::invalid_argument("concat: unsupported rank/axis for shape " + shape_str(first.shape));
  }
  int total = 0;
  for (Var p : parts) {
    const Tensor& t = out_of(p.id);
    if (t.rank() != rank) throw std::invalid_argument("concat: rank mismatch");
    for (int d = 0; d < rank; ++d) {
      if (d != axis && t.shape[static_cast<std::size_t>(d)] != first.shape[static_cast<std::size_t>(d)]) {
        throw std::invalid_argument("concat: shape mismatch off axis, " + shape_str(t.shape) + " vs " +
                                    shape_str(first.shape));
      }
    }
    total += t.shape[static_cast<std::size_t>(axis)];
  }
  Shape oshape = first.shape;
  oshape[static_cast<std::size_t>(axis)] = total;
  Tensor out = Tensor::zeros(oshape);
  std::vector<int> ids;
  ids.reserve(parts.size());
  for (Var p : parts) ids.push_back(p.id);

  if (rank == 1 || axis == 0) {
    // contiguous blocks
    std::size_t off = 0;
    for (Var p : parts) {
      const auto& v = out_of(p.id).values;
      std::copy(v.begin(), v.end(), out.values.begin() + static_cast<std::ptrdiff_t>(off));
      off += v.size();
    }
    const int self = static_cast<int>(nodes_.size());
    return emplace(std::move(out), [ids, self](Graph& g) {
      const auto& gout = g.nodes_[self].grad;
      std::size_t off = 0;
      for (int id : ids) {
        auto& gi = g.grad_buf(id);
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += gout[off + i];
        off += gi.size();
      }
    });
  }

  // rank 2, axis 1
  const int R = first.rows();
  const int C = total;
  {
    int coff = 0;
    for (Var p : parts) {
      const Tensor& t = out_of(p.id);
      for (int i = 0; i < R; ++i)
        for (int j = 0; j < t.cols(); ++j) out.at(i, coff + j) = t.at(i, j);
      coff += t.cols();
    }
  }
  const int self = static_cast<int>(nodes_.size());
  return emplace(std::move(out), [ids, self, R, C](Graph& g) {
    const auto& gout = g.nodes_[self].grad;
    int coff = 0;
    for (int id : ids) {
      auto& gi = g.grad_buf(id);
      const int c = g.out_of(id).cols();
      for (int i = 0; i < R; ++i)
        for (int j = 0; j < c; ++j)
          gi[static_cast<std::size_t>(i) * c + j] += gout[static_cast<std::size_t>(i) * C + coff + j];
      coff += c;
    }
  });
}

Var Graph::slice(Var x, int axis, int start, int len) {
  check(x);
  const Tensor& xv = out_of(x.id);
  const int rank = xv.rank();
  if (rank < 1 || rank > 2 || axis < 0 || axis >= rank) {
    throw std::invalid_argument("slice: unsupported rank/axis for shape " + shape_str(xv.shape));
  }
  const int dim = xv.shape[static_cast<std::size_t>(axis)];
  if (len <= 0 || start < 0 || start + len > dim) {
    throw std::out_of_range("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                            ") out of bounds for axis size " + std::to_string(dim));
  }
  Shape oshape = xv.shape;
  oshape[static_cast<std::size_t>(axis)] = len;
  Tensor out = Tensor::zeros(oshape);
  const int xi = x.id;
  if (rank == 1 || axis == 0) {
    const int C = rank == 2 ? xv.cols() : 1;
    for (int i = 0; i < len; ++i)
      for (int j = 0; j < C; ++j)
        out.values[static_cast<std::size_t>(i) * C + j] = xv.values[static_cast<std::size_t>(start + i) * C + j];
    const int self = static_cast<int>(nodes_.size());
    return emplace(std::move(out), [=](Graph& g) {
      const auto& gout = g.nodes_[self].grad;
      auto& gx = g.grad_buf(xi);
      for (int i = 0; i < len; ++i)
        for (int j = 0; j < C; ++j)
          gx[static_cast<std::size_t>(start + i) * C + j] += gout[static_cast<std::size_t>(i) * C + j];
    });
  }
  const int R = xv.rows(), C = xv.cols();
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < len; ++j) out.at(i, j) = xv.at(i, start + j);
  const int self = static_cast<int>(nodes_.size());
  return emplace(std::move(out), [=](Graph& g) {
    const auto& gout = g.nodes_[self].grad;
    auto& gx = g.grad_buf(xi);
    for (int i = 0; i < R; ++i)
      for (int j = 0; j < len; ++j)
        gx[static_cast<std::size_t>(i) * C + start + j] += gout[static_cast<std::size_t>(i) * len + j];
  });
}

Var Graph::reshape(Var x, Shape s) {
  check(x);
  const Tensor& xv = out_of(x.id);
  if (shape_numel(s) != xv.numel()) {
    throw std::invalid_argument("reshape: cannot reshape " + shape_str(xv.shape) + " to " + shape_str(s));
  }
  Tensor out(std::move(s), xv.values);
  const int xi = x.id;
  const int self = static_cast<int>(nodes_.size());
  return emplace(std::move(out), [=](Graph& g) {
    const auto& gout = g.nodes_[self].grad;
    auto& gx = g.grad_buf(xi);
    for (std::size_t i = 0; i < gout.size(); ++i) gx[i] += gout[i];
  });
}

Var Graph::reduce_sum(Var x) {
  check(x);
  const Tensor& xv = out_of(x.id);
  double s = 0.0;
  for (double v : xv.values) s += v;
  const int xi = x.id;
  const int self = static_cast<int>(nodes_.size());
  return emplace(Tensor::scalar(s), [=](Graph& g) {
    const double go = g.nodes_[self].grad[0];
    auto& gx = g.grad_buf(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go;
  });
}

Var Graph::reduce_max(Var x) {
  check(x);
  const Tensor& xv = out_of(x.id);
  if (xv.numel() == 0) throw std::invalid_argument("reduce_max: empty input");
  std::size_t arg = 0;
  double best = xv.values[0];
  for (std::size_t i = 1; i < xv.values.size(); ++i) {
    if (xv.values[i] > best) {
      best = xv.values[i];
      arg = i;
    }
  }
  const int xi = x.id;
  const int self = static_cast<int>(nodes_.size());
  return emplace(Tensor::scalar(best), [=](Graph& g) {
    g.grad_buf(xi)[arg] += g.nodes_[self].grad[0];
  });
}

Var Graph::mean(Var x) {
  check(x);
  const auto n = out_of(x.id).numel();
  return scale(reduce_sum(x), 1.0 / static_cast<double>(n));
}

Var Graph::softmax(Var x) {
  check(x);
  const Tensor& xv = out_of(x.id);
  if (xv.rank() < 1 || xv.rank() > 2) {
    throw std::invalid_argument("softmax: unsupported rank for shape " + shape_str(xv.shape));
  }
  const int R = xv.rank() == 2 ? xv.rows() : 1;
  const int C = xv.rank() == 2 ? xv.cols() : static_cast<int>(xv.numel());
  Tensor out = Tensor::zeros(xv.shape);
  for (int i = 0; i < R; ++i) {
    const double* in = xv.values.data() + static_cast<std::size_t>(i) * C;
    double* o = out.values.data() + static_cast<std::size_t>(i) * C;
    double mx = in[0];
    for (int j = 1; j < C; ++j) mx = std::max(mx, in[j]);
    double z = 0.0;
    for (int j = 0; j < C; ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (int j = 0; j < C; ++j) o[j] /= z;
  }
  const int xi = x.id;
  const int self = static_cast<int>(nodes_.size());
  return emplace(std::move(out), [=](Graph& g) {
    const auto& gout = g.nodes_[self].grad;
    const auto& y = g.nodes_[self].out.values;
    auto& gx = g.grad_buf(xi);
    for (int i = 0; i < R; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * C;
      double dot = 0.0;
      for (int j = 0; j < C; ++j) dot += gout[base + j] * y[base + j];
      for (int j = 0; j < C; ++j) gx[base + j] += y[base + j] * (gout[base + j] - dot);
    }
  });
}

Var Graph::conv1d_valid(Var signal, Var kernels, Var bias) {
  check(signal);
  check(kernels);
  check(bias);
  const Tensor& sv = out_of(signal.id);
  const Tensor& kv = out_of(kernels.id);
  const Tensor& bv = out_of(bias.id);
  if (sv.rank() != 2 || kv.rank() != 3 || bv.rank() != 1) {
    throw std::invalid_argument("conv1d_valid: need signal [l x c_in], kernels [k x c_in x c_out], bias [c_out]; got " +
                                shape_str(sv.shape) + ", " + shape_str(kv.shape) + ", " + shape_str(bv.shape));
  }
  const int l = sv.shape[0], cin = sv.shape[1];
  const int k = kv.shape[0], kin = kv.shape[1], cout = kv.shape[2];
  if (kin != cin || bv.shape[0] != cout) {
    throw std::invalid_argument("conv1d_valid: channel mismatch, signal " + shape_str(sv.shape) +
                                " kernels " + shape_str(kv.shape) + " bias " + shape_str(bv.shape));
  }
  if (k > l) {
    throw std::invalid_argument("conv1d_valid: kernel length " + std::to_string(k) +
                                " exceeds signal length " + std::to_string(l));
  }
  const int lo = l - k + 1;
  Tensor out = Tensor::zeros({lo, cout});
  for (int t = 0; t < lo; ++t) {
    for (int o = 0; o < cout; ++o) {
      double acc = bv.values[static_cast<std::size_t>(o)];
      for (int i = 0; i < k; ++i)
        for (int c = 0; c < cin; ++c)
          acc += sv.at(t + i, c) * kv.values[(static_cast<std::size_t>(i) * cin + c) * cout + o];
      out.at(t, o) = acc;
    }
  }
  const int si = signal.id, ki = kernels.id, bi = bias.id;
  const int self = static_cast<int>(nodes_.size());
  return emplace(std::move(out), [=](Graph& g) {
    const auto& gout = g.nodes_[self].grad;
    const auto& vs = g.out_of(si).values;
    const auto& vk = g.out_of(ki).values;
    auto& gs = g.grad_buf(si);
    auto& gk = g.grad_buf(ki);
    auto& gb = g.grad_buf(bi);
    for (int t = 0; t < lo; ++t)
      for (int o = 0; o < cout; ++o) {
        const double go = gout[static_cast<std::size_t>(t) * cout + o];
        if (go == 0.0) continue;
        gb[static_cast<std::size_t>(o)] += go;
        for (int i = 0; i < k; ++i)
          for (int c = 0; c < cin; ++c) {
            const std::size_t sidx = static_cast<std::size_t>(t + i) * cin + c;
            const std::size_t kidx = (static_cast<std::size_t>(i) * cin + c) * cout + o;
            gs[sidx] += go * vk[kidx];
            gk[kidx] += go * vs[sidx];
          }
      }
  });
}

Var Graph::global_max_pool(Var signal) {
  check(signal);
  const Tensor& sv = out_of(signal.id);
  if (sv.rank() != 2 || sv.rows() < 1) {
    throw std::invalid_argument("global_max_pool: need non-empty [l x c], got " + shape_str(sv.shape));
  }
  const int l = sv.rows(), c = sv.cols();
  Tensor out = Tensor::zeros({c});
  std::vector<int> argrow(static_cast<std::size_t>(c), 0);
  for (int j = 0; j < c; ++j) {
    double best = sv.at(0, j);
    for (int i = 1; i < l; ++i) {
      if (sv.at(i, j) > best) {
        best = sv.at(i, j);
        argrow[static_cast<std::size_t>(j)] = i;
      }
    }
    out.values[static_cast<std::size_t>(j)] = best;
  }
  const int si = signal.id;
  const int self = static_cast<int>(nodes_.size());
  return emplace(std::move(out), [=, arg = std::move(argrow)](Graph& g) {
    const auto& gout = g.nodes_[self].grad;
    auto& gs = g.grad_buf(si);
    for (int j = 0; j < c; ++j)
      gs[static_cast<std::size_t>(arg[static_cast<std::size_t>(j)]) * c + j] += gout[static_cast<std::size_t>(j)];
  });
}

Var Graph::segment_max_pool(Var x, int segment) {
  check(x);
  const Tensor& xv = out_of(x.id);
  if (xv.rank() != 2 || segment < 1 || xv.rows() % segment != 0) {
    throw std::invalid_argument("segment_max_pool: rows of " + shape_str(xv.shape) +
                                " not divisible into segments of " + std::to_string(segment));
  }
  const int blocks = xv.rows() / segment, c = xv.cols();
  Tensor out = Tensor::zeros({blocks, c});
  std::vector<int> argrow(static_cast<std::size_t>(blocks) * c, 0);
  for (int b = 0; b < blocks; ++b)
    for (int j = 0; j < c; ++j) {
      int arg = b * segment;
      double best = xv.at(arg, j);
      for (int i = b * segment + 1; i < (b + 1) * segment; ++i) {
        if (xv.at(i, j) > best) {
          best = xv.at(i, j);
          arg = i;
        }
      }
      out.at(b, j) = best;
      argrow[static_cast<std::size_t>(b) * c + j] = arg;
    }
  const int xi = x.id;
  const int self = static_cast<int>(nodes_.size());
  return emplace(std::move(out), [=, arg = std::move(argrow)](Graph& g) {
    const auto& gout = g.nodes_[self].grad;
    auto& gx = g.grad_buf(xi);
    for (std::size_t k = 0; k < gout.size(); ++k)
      gx[static_cast<std::size_t>(arg[k]) * c + k % static_cast<std::size_t>(c)] += gout[k];
  });
}

Var Graph::embedding_lookup(Var table, int index) {
  check(table);
  const Tensor& tv = out_of(table.id);
  if (tv.rank() != 2) throw std::invalid_argument("embedding_lookup: table must be rank 2, got " + shape_str(tv.shape));
  if (index < 0 || index >= tv.rows()) {
    throw std::out_of_range("embedding_lookup: index " + std::to_string(index) + " out of range [0, " +
                            std::to_string(tv.rows()) + ")");
  }
  const int d = tv.cols();
  Tensor out = Tensor::zeros({d});
  for (int j = 0; j < d; ++j) out.values[static_cast<std::size_t>(j)] = tv.at(index, j);
  const int ti = table.id;
  const int self = static_cast<int>(nodes_.size());
  return emplace(std::move(out), [=](Graph& g) {
    const auto& gout = g.nodes_[self].grad;
    auto& gt = g.grad_buf(ti);
    for (int j = 0; j < d; ++j) gt[static_cast<std::size_t>(index) * d + j] += gout[static_cast<std::size_t>(j)];
  });
}

Var Graph::rows_lookup(Var table, std::vector<int> indices) {
  check(table);
  const Tensor& tv = out_of(table.id);
  if (tv.rank() != 2) throw std::invalid_argument("rows_lookup: table must be rank 2, got " + shape_str(tv.shape));
  const int d = tv.cols();
  const int B = static_cast<int>(indices.size());
  if (B == 0) throw std::invalid_argument("rows_lookup: empty index list");
  for (int idx : indices) {
    if (idx < 0 || idx >= tv.rows()) {
      throw std::out_of_range("rows_lookup: index " + std::to_string(idx) + " out of range [0, " +
                              std::to_string(tv.rows()) + ")");
    }
  }
  Tensor out = Tensor::zeros({B, d});
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = tv.at(indices[static_cast<std::size_t>(i)], j);
  const int ti = table.id;
  const int self = static_cast<int>(nodes_.size());
  return emplace(std::move(out), [=, idx = std::move(indices)](Graph& g) {
    const auto& gout = g.nodes_[self].grad;
    auto& gt = g.grad_buf(ti);
    for (int i = 0; i < B; ++i)
      for (int j = 0; j < d; ++j)
        gt[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)]) * d + j] +=
            gout[static_cast<std::size_t>(i) * d + j];
  });
}

void Graph::backward(Var loss) {
  check(loss);
  auto& ln = nodes_[static_cast<std::size_t>(loss.id)];
  if (ln.out.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(ln.out.shape));
  }
  for (auto& n : nodes_) n.grad.assign(n.out.values.size(), 0.0);
  ln.grad[0] = 1.0;
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (n.backprop) n.backprop(*this);
  }
  for (auto& n : nodes_) {
    if (n.bound != nullptr && n.bound->requires_grad) {
      auto& pg = n.bound->grad;
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
    }
  }
}

// ---------------------------------------------------------------------------
// LSTM

LstmParams LstmParams::init(int in_dim, int hidden_dim, Rng& rng) {
  LstmParams p;
  auto w = [&] { return glorot_uniform({in_dim, hidden_dim}, in_dim, hidden_dim, rng); };
  auto u = [&] { return glorot_uniform({hidden_dim, hidden_dim}, hidden_dim, hidden_dim, rng); };
  auto b = [&] { return Tensor::zeros({1, hidden_dim}, true); };
  p.wi = w(); p.wf = w(); p.wg = w(); p.wo = w();
  p.ui = u(); p.uf = u(); p.ug = u(); p.uo = u();
  p.bi = b(); p.bf = b(); p.bg = b(); p.bo = b();
  return p;
}

std::vector<Tensor*> LstmParams::tensors() {
  return {&wi, &wf, &wg, &wo, &ui, &uf, &ug, &uo, &bi, &bf, &bg, &bo};
}

std::vector<std::pair<std::string, Tensor*>> LstmParams::named_tensors(const std::string& prefix) {
  return {{prefix + ".w_i", &wi}, {prefix + ".w_f", &wf}, {prefix + ".w_g", &wg}, {prefix + ".w_o", &wo},
          {prefix + ".u_i", &ui}, {prefix + ".u_f", &uf}, {prefix + ".u_g", &ug}, {prefix + ".u_o", &uo},
          {prefix + ".b_i", &bi}, {prefix + ".b_f", &bf}, {prefix + ".b_g", &bg}, {prefix + ".b_o", &bo}};
}

LstmStepState lstm_cell(Graph& g, Var x, const LstmStepState& state, LstmParams& p) {
  // The params live outside the graph; bind leaves per call. Repeated leaves
  // for the same tensor accumulate correctly.
  Var wi = g.leaf(p.wi), wf = g.leaf(p.wf);
  Var wg = g.leaf(p.wg), wo = g.leaf(p.wo);
  Var ui = g.leaf(p.ui), uf = g.leaf(p.uf);
  Var ug = g.leaf(p.ug), uo = g.leaf(p.uo);
  Var bi = g.leaf(p.bi), bf = g.leaf(p.bf);
  Var bg = g.leaf(p.bg), bo = g.leaf(p.bo);

  auto gate = [&](Var w, Var u, Var b) {
    return g.add_rows(g.add(g.matmul(x, w), g.matmul(state.h, u)), b);
  };
  Var i = g.sigmoid(gate(wi, ui, bi));
  Var f = g.sigmoid(gate(wf, uf, bf));
  Var cand = g.tanh(gate(wg, ug, bg));
  Var o = g.sigmoid(gate(wo, uo, bo));
  Var c = g.add(g.mul(f, state.c), g.mul(i, cand));
  Var h = g.mul(o, g.tanh(c));
  return LstmStepState{h, c};
}

LstmTrace lstm_forward(Graph& g, const std::vector<Var>& inputs, LstmParams& p, int batch) {
  if (inputs.empty()) throw std::invalid_argument("lstm_forward: empty input sequence");
  const int H = p.hidden_dim();
  LstmStepState state{g.constant(Tensor::zeros({batch, H})), g.constant(Tensor::zeros({batch, H}))};
  LstmTrace trace;
  trace.outputs.reserve(inputs.size());
  for (Var x : inputs) {
    const Tensor& xv = g.value(x);
    if (xv.rank() != 2 || xv.rows() != batch || xv.cols() != p.in_dim()) {
      throw std::invalid_argument("lstm_forward: input shape " + shape_str(xv.shape) + " does not match batch " +
                                  std::to_string(batch) + " x in_dim " + std::to_string(p.in_dim()));
    }
    state = lstm_cell(g, x, state, p);
    trace.outputs.push_back(state.h);
  }
  trace.final_state = state;
  return trace;
}

// ---------------------------------------------------------------------------
// Adam

AdamState::AdamState(const std::vector<Tensor*>& params, double lr, double b1, double b2, double eps)
    : learning_rate(lr), beta1(b1), beta2(b2), epsilon(eps) {
  first_moment.reserve(params.size());
  second_moment.reserve(params.size());
  for (const Tensor* p : params) {
    first_moment.emplace_back(p->values.size(), 0.0);
    second_moment.emplace_back(p->values.size(), 0.0);
  }
}

void adam_step(const std::vector<Tensor*>& params, AdamState& state) {
  if (params.size() != state.first_moment.size()) {
    throw std::invalid_argument("adam_step: parameter count " + std::to_string(params.size()) +
                                " does not match state with " + std::to_string(state.first_moment.size()));
  }
  ++state.step_count;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    auto& m = state.first_moment[pi];
    auto& v = state.second_moment[pi];
    if (p.grad.size() != p.values.size() || m.size() != p.values.size()) {
      throw std::invalid_argument("adam_step: shape mismatch for parameter " + std::to_string(pi));
    }
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      const double gr = p.grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gr;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gr * gr;
      p.values[i] -= state.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + state.epsilon);
    }
  }
}

}  // namespace lcrank
