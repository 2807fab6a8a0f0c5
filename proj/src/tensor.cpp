#include "rlvr/tensor.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace rlvr::ad {

namespace {

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dimension must be positive");
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out + "]";
}

void check_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
  if (a->shape != b->shape)
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a->shape) +
                                " vs " + shape_str(b->shape));
}

bool grad_needed(std::initializer_list<const TensorPtr*> inputs) {
  for (const TensorPtr* t : inputs)
    if ((*t)->requires_grad) return true;
  return false;
}

// Output of an op that depends on any grad-requiring input itself requires
// grad so downstream ops keep recording.
TensorPtr make_out(std::vector<int> shape, bool requires_grad) {
  auto t = make_tensor(std::move(shape));
  t->requires_grad = requires_grad;
  return t;
}

int g_max_threads = 0;

}  // namespace

double Tensor::scalar() const {
  if (data.size() != 1) throw std::invalid_argument("scalar() on non-scalar tensor");
  return data[0];
}

void Tensor::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() { grad.assign(data.size(), 0.0); }

TensorPtr make_tensor(std::vector<int> shape, double fill) {
  auto t = std::make_shared<Tensor>();
  int64_t n = shape_numel(shape);
  t->shape = std::move(shape);
  t->data.assign(static_cast<size_t>(n), fill);
  return t;
}

TensorPtr make_tensor(std::vector<int> shape, std::vector<double> data) {
  auto t = std::make_shared<Tensor>();
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw std::invalid_argument("make_tensor: data length does not match shape");
  t->shape = std::move(shape);
  t->data = std::move(data);
  return t;
}

TensorPtr make_param(std::vector<int> shape, std::vector<double> data) {
  auto t = make_tensor(std::move(shape), std::move(data));
  t->requires_grad = true;
  return t;
}

TensorPtr make_scalar(double v) { return make_tensor({1}, std::vector<double>{v}); }

void Tape::backward(const TensorPtr& loss) {
  if (loss->data.size() != 1)
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  for (auto& n : nodes_) n.output->zero_grad();
  loss->ensure_grad();
  loss->grad[0] += 1.0;
  for (size_t i = nodes_.size(); i-- > 0;) nodes_[i].rule();
}

void set_max_threads(int n) {
  g_max_threads = n < 0 ? 0 : n;
  if (g_max_threads > 0) omp_set_num_threads(g_max_threads);
}

int max_threads() {
  return g_max_threads > 0 ? g_max_threads : omp_get_max_threads();
}

// ---- dense kernels ---------------------------------------------------------

void matmul_serial(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<size_t>(i) * n;
    std::fill(ci, ci + n, 0.0);
    const double* ai = a + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void matmul_omp(const double* a, const double* b, double* c, int m, int k, int n) {
  // Row partitioning: every output element keeps the serial reduction order,
  // so results are bitwise identical to matmul_serial for any thread count.
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(m) * k * n > 32768 && !omp_in_parallel())
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<size_t>(i) * n;
    std::fill(ci, ci + n, 0.0);
    const double* ai = a + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

namespace {

// C[m×n] += A[m×k]·B[k×n], used by backward rules.
void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<size_t>(i) * n;
    const double* ai = a + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C[m×n] += A[m×k]·B[n×k]ᵀ
void matmul_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    double* ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<size_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// C[k×n] += A[m×k]ᵀ·B[m×n]
void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    const double* bi = b + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double aip = ai[p];
      double* cp = c + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
}

}  // namespace

// ---- ops -------------------------------------------------------------------

TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a->shape) + " · " +
                                shape_str(b->shape));
  const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
  auto out = make_out({m, n}, grad_needed({&a, &b}));
  matmul_omp(a->data.data(), b->data.data(), out->data.data(), m, k, n);
  if (tape && out->requires_grad) {
    tape->record(out, [a, b, out, m, k, n] {
      if (a->requires_grad) {
        a->ensure_grad();  // dA += dC·Bᵀ
        matmul_nt_acc(out->grad.data(), b->data.data(), a->grad.data(), m, n, k);
      }
      if (b->requires_grad) {
        b->ensure_grad();  // dB += Aᵀ·dC
        matmul_tn_acc(a->data.data(), out->grad.data(), b->grad.data(), m, k, n);
      }
    });
  }
  return out;
}

TensorPtr matmul_nt(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[1])
    throw std::invalid_argument("matmul_nt: incompatible shapes " + shape_str(a->shape) + " · " +
                                shape_str(b->shape) + "ᵀ");
  const int m = a->shape[0], k = a->shape[1], n = b->shape[0];
  auto out = make_out({m, n}, grad_needed({&a, &b}));
  matmul_nt_acc(a->data.data(), b->data.data(), out->data.data(), m, k, n);
  if (tape && out->requires_grad) {
    tape->record(out, [a, b, out, m, k, n] {
      if (a->requires_grad) {
        a->ensure_grad();  // dA += dC·B
        matmul_acc(out->grad.data(), b->data.data(), a->grad.data(), m, n, k);
      }
      if (b->requires_grad) {
        b->ensure_grad();  // dB += dCᵀ·A
        matmul_tn_acc(out->grad.data(), a->data.data(), b->grad.data(), m, n, k);
      }
    });
  }
  return out;
}

namespace {

enum class EwKind { add, sub, mul };

TensorPtr elementwise2(Tape* tape, const TensorPtr& a, const TensorPtr& b, EwKind kind,
                       const char* name) {
  // Scalar-or-equal shapes only; no general broadcasting.
  const bool a_scalar = a->numel() == 1;
  const bool b_scalar = b->numel() == 1;
  if (!a_scalar && !b_scalar) check_same_shape(a, b, name);
  const TensorPtr& big = b_scalar ? a : b;
  auto out = make_out(big->shape, grad_needed({&a, &b}));
  const size_t n = big->data.size();
  for (size_t i = 0; i < n; ++i) {
    const double av = a_scalar ? a->data[0] : a->data[i];
    const double bv = b_scalar ? b->data[0] : b->data[i];
    out->data[i] = kind == EwKind::add ? av + bv : kind == EwKind::sub ? av - bv : av * bv;
  }
  if (tape && out->requires_grad) {
    tape->record(out, [a, b, out, a_scalar, b_scalar, kind, n] {
      if (a->requires_grad) {
        a->ensure_grad();
        for (size_t i = 0; i < n; ++i) {
          const double g = kind == EwKind::mul
                               ? out->grad[i] * (b_scalar ? b->data[0] : b->data[i])
                               : out->grad[i];
          a->grad[a_scalar ? 0 : i] += g;
        }
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (size_t i = 0; i < n; ++i) {
          double g;
          switch (kind) {
            case EwKind::add: g = out->grad[i]; break;
            case EwKind::sub: g = -out->grad[i]; break;
            default: g = out->grad[i] * (a_scalar ? a->data[0] : a->data[i]);
          }
          b->grad[b_scalar ? 0 : i] += g;
        }
      }
    });
  }
  return out;
}

}  // namespace

TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  return elementwise2(tape, a, b, EwKind::add, "add");
}
TensorPtr sub(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  return elementwise2(tape, a, b, EwKind::sub, "sub");
}
TensorPtr mul(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  return elementwise2(tape, a, b, EwKind::mul, "mul");
}

TensorPtr scale(Tape* tape, const TensorPtr& a, double c) {
  auto out = make_out(a->shape, a->requires_grad);
  for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] * c;
  if (tape && out->requires_grad) {
    tape->record(out, [a, out, c] {
      a->ensure_grad();
      for (size_t i = 0; i < a->data.size(); ++i) a->grad[i] += c * out->grad[i];
    });
  }
  return out;
}

TensorPtr add_const(Tape* tape, const TensorPtr& a, double c) {
  auto out = make_out(a->shape, a->requires_grad);
  for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] + c;
  if (tape && out->requires_grad) {
    tape->record(out, [a, out] {
      a->ensure_grad();
      for (size_t i = 0; i < a->data.size(); ++i) a->grad[i] += out->grad[i];
    });
  }
  return out;
}

TensorPtr add_flat(Tape* tape, const TensorPtr& a, const std::vector<double>& v, double c) {
  if (v.size() != a->data.size())
    throw std::invalid_argument("add_flat: constant length does not match tensor");
  auto out = make_out(a->shape, a->requires_grad);
  for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] + c * v[i];
  if (tape && out->requires_grad) {
    tape->record(out, [a, out] {
      a->ensure_grad();
      for (size_t i = 0; i < a->data.size(); ++i) a->grad[i] += out->grad[i];
    });
  }
  return out;
}

TensorPtr gelu(Tape* tape, const TensorPtr& a) {
  // Exact Gaussian form: x·Φ(x); derivative Φ(x) + x·φ(x).
  auto out = make_out(a->shape, a->requires_grad);
  for (size_t i = 0; i < a->data.size(); ++i) {
    const double x = a->data[i];
    out->data[i] = 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
  }
  if (tape && out->requires_grad) {
    tape->record(out, [a, out] {
      a->ensure_grad();
      constexpr double inv_sqrt_2pi = 0.3989422804014327;
      for (size_t i = 0; i < a->data.size(); ++i) {
        const double x = a->data[i];
        const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
        a->grad[i] += (cdf + x * pdf) * out->grad[i];
      }
    });
  }
  return out;
}

TensorPtr exp_op(Tape* tape, const TensorPtr& a) {
  auto out = make_out(a->shape, a->requires_grad);
  for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = std::exp(a->data[i]);
  if (tape && out->requires_grad) {
    tape->record(out, [a, out] {
      a->ensure_grad();
      for (size_t i = 0; i < a->data.size(); ++i) a->grad[i] += out->data[i] * out->grad[i];
    });
  }
  return out;
}

TensorPtr log_op(Tape* tape, const TensorPtr& a) {
  auto out = make_out(a->shape, a->requires_grad);
  for (size_t i = 0; i < a->data.size(); ++i) {
    if (!(a->data[i] > 0.0))
      throw std::domain_error("log: non-positive input " + std::to_string(a->data[i]));
    out->data[i] = std::log(a->data[i]);
  }
  if (tape && out->requires_grad) {
    tape->record(out, [a, out] {
      a->ensure_grad();
      for (size_t i = 0; i < a->data.size(); ++i) a->grad[i] += out->grad[i] / a->data[i];
    });
  }
  return out;
}

TensorPtr clamp(Tape* tape, const TensorPtr& a, double lo, double hi) {
  auto out = make_out(a->shape, a->requires_grad);
  for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = std::clamp(a->data[i], lo, hi);
  if (tape && out->requires_grad) {
    tape->record(out, [a, out, lo, hi] {
      a->ensure_grad();
      for (size_t i = 0; i < a->data.size(); ++i)
        if (a->data[i] >= lo && a->data[i] <= hi) a->grad[i] += out->grad[i];
    });
  }
  return out;
}

TensorPtr minimum(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(a, b, "minimum");
  auto out = make_out(a->shape, grad_needed({&a, &b}));
  for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = std::min(a->data[i], b->data[i]);
  if (tape && out->requires_grad) {
    // Ties route the gradient to the first operand.
    tape->record(out, [a, b, out] {
      for (size_t i = 0; i < a->data.size(); ++i) {
        const bool pick_a = a->data[i] <= b->data[i];
        TensorPtr dst = pick_a ? a : b;
        if (dst->requires_grad) {
          dst->ensure_grad();
          dst->grad[i] += out->grad[i];
        }
      }
    });
  }
  return out;
}

TensorPtr sum(Tape* tape, const TensorPtr& a) {
  auto out = make_out({1}, a->requires_grad);
  double acc = 0.0;
  for (double v : a->data) acc += v;
  out->data[0] = acc;
  if (tape && out->requires_grad) {
    tape->record(out, [a, out] {
      a->ensure_grad();
      for (size_t i = 0; i < a->data.size(); ++i) a->grad[i] += out->grad[0];
    });
  }
  return out;
}

TensorPtr mean(Tape* tape, const TensorPtr& a) {
  return scale(tape, sum(tape, a), 1.0 / static_cast<double>(a->numel()));
}

TensorPtr log_softmax(Tape* tape, const TensorPtr& a) {
  const int n = a->shape.size() == 2 ? a->shape[0] : 1;
  const int v = a->shape.size() == 2 ? a->shape[1] : a->shape[0];
  if (v < 1) throw std::invalid_argument("log_softmax: empty last axis");
  auto out = make_out(a->shape, a->requires_grad);
  for (int i = 0; i < n; ++i) {
    const double* x = a->data.data() + static_cast<size_t>(i) * v;
    double* y = out->data.data() + static_cast<size_t>(i) * v;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < v; ++j) mx = std::max(mx, x[j]);
    double se = 0.0;
    for (int j = 0; j < v; ++j) se += std::exp(x[j] - mx);
    const double lse = mx + std::log(se);
    for (int j = 0; j < v; ++j) y[j] = x[j] - lse;
  }
  if (tape && out->requires_grad) {
    tape->record(out, [a, out, n, v] {
      a->ensure_grad();
      for (int i = 0; i < n; ++i) {
        const double* y = out->data.data() + static_cast<size_t>(i) * v;
        const double* dy = out->grad.data() + static_cast<size_t>(i) * v;
        double* dx = a->grad.data() + static_cast<size_t>(i) * v;
        double gsum = 0.0;
        for (int j = 0; j < v; ++j) gsum += dy[j];
        for (int j = 0; j < v; ++j) dx[j] += dy[j] - std::exp(y[j]) * gsum;
      }
    });
  }
  return out;
}

TensorPtr softmax_causal(Tape* tape, const TensorPtr& scores, int offset) {
  if (scores->shape.size() != 2) throw std::invalid_argument("softmax_causal: rank-2 required");
  const int n = scores->shape[0], m = scores->shape[1];
  auto out = make_out(scores->shape, scores->requires_grad);
  for (int i = 0; i < n; ++i) {
    const int lim = std::min(m, offset + i + 1);
    if (lim <= 0) throw std::invalid_argument("softmax_causal: row with no visible column");
    const double* x = scores->data.data() + static_cast<size_t>(i) * m;
    double* y = out->data.data() + static_cast<size_t>(i) * m;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < lim; ++j) mx = std::max(mx, x[j]);
    double se = 0.0;
    for (int j = 0; j < lim; ++j) se += std::exp(x[j] - mx);
    for (int j = 0; j < lim; ++j) y[j] = std::exp(x[j] - mx) / se;
    // columns >= lim stay 0
  }
  if (tape && out->requires_grad) {
    tape->record(out, [scores, out, n, m, offset] {
      scores->ensure_grad();
      for (int i = 0; i < n; ++i) {
        const int lim = std::min(m, offset + i + 1);
        const double* p = out->data.data() + static_cast<size_t>(i) * m;
        const double* dy = out->grad.data() + static_cast<size_t>(i) * m;
        double* dx = scores->grad.data() + static_cast<size_t>(i) * m;
        double dot = 0.0;
        for (int j = 0; j < lim; ++j) dot += p[j] * dy[j];
        for (int j = 0; j < lim; ++j) dx[j] += p[j] * (dy[j] - dot);
      }
    });
  }
  return out;
}

TensorPtr rmsnorm(Tape* tape, const TensorPtr& x, const TensorPtr& gain, double eps) {
  if (x->shape.size() != 2) throw std::invalid_argument("rmsnorm: rank-2 required");
  const int n = x->shape[0], d = x->shape[1];
  if (gain->numel() != d) throw std::invalid_argument("rmsnorm: gain length mismatch");
  auto out = make_out(x->shape, grad_needed({&x, &gain}));
  std::vector<double> inv_rms(n);
  for (int i = 0; i < n; ++i) {
    const double* xi = x->data.data() + static_cast<size_t>(i) * d;
    double ms = 0.0;
    for (int j = 0; j < d; ++j) ms += xi[j] * xi[j];
    inv_rms[i] = 1.0 / std::sqrt(ms / d + eps);
    double* yi = out->data.data() + static_cast<size_t>(i) * d;
    for (int j = 0; j < d; ++j) yi[j] = xi[j] * gain->data[j] * inv_rms[i];
  }
  if (tape && out->requires_grad) {
    tape->record(out, [x, gain, out, inv_rms, n, d] {
      for (int i = 0; i < n; ++i) {
        const double* xi = x->data.data() + static_cast<size_t>(i) * d;
        const double* dy = out->grad.data() + static_cast<size_t>(i) * d;
        const double r = inv_rms[i];
        if (gain->requires_grad) {
          gain->ensure_grad();
          for (int j = 0; j < d; ++j) gain->grad[j] += dy[j] * xi[j] * r;
        }
        if (x->requires_grad) {
          x->ensure_grad();
          double* dx = x->grad.data() + static_cast<size_t>(i) * d;
          double dot = 0.0;  // Σ dy_j g_j x_j
          for (int j = 0; j < d; ++j) dot += dy[j] * gain->data[j] * xi[j];
          const double coef = dot * r * r * r / d;
          for (int j = 0; j < d; ++j) dx[j] += dy[j] * gain->data[j] * r - xi[j] * coef;
        }
      }
    });
  }
  return out;
}

TensorPtr embedding_rows(Tape* tape, const TensorPtr& table, const std::vector<int>& ids) {
  if (table->shape.size() != 2) throw std::invalid_argument("embedding_rows: table must be rank 2");
  const int v = table->shape[0], d = table->shape[1];
  const int n = static_cast<int>(ids.size());
  for (int id : ids)
    if (id < 0 || id >= v) throw std::invalid_argument("embedding_rows: id out of range");
  auto out = make_out({n, d}, table->requires_grad);
  for (int i = 0; i < n; ++i)
    std::copy_n(table->data.data() + static_cast<size_t>(ids[i]) * d, d,
                out->data.data() + static_cast<size_t>(i) * d);
  if (tape && out->requires_grad) {
    tape->record(out, [table, out, ids, d] {
      table->ensure_grad();
      for (size_t i = 0; i < ids.size(); ++i) {
        double* dst = table->grad.data() + static_cast<size_t>(ids[i]) * d;
        const double* src = out->grad.data() + i * d;
        for (int j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

TensorPtr pick(Tape* tape, const TensorPtr& x, const std::vector<int>& ids) {
  if (x->shape.size() != 2) throw std::invalid_argument("pick: rank-2 required");
  const int n = x->shape[0], v = x->shape[1];
  if (static_cast<int>(ids.size()) != n) throw std::invalid_argument("pick: ids length mismatch");
  for (int id : ids)
    if (id < 0 || id >= v) throw std::invalid_argument("pick: id out of range");
  auto out = make_out({n}, x->requires_grad);
  for (int i = 0; i < n; ++i) out->data[i] = x->data[static_cast<size_t>(i) * v + ids[i]];
  if (tape && out->requires_grad) {
    tape->record(out, [x, out, ids, v] {
      x->ensure_grad();
      for (size_t i = 0; i < ids.size(); ++i)
        x->grad[i * v + ids[i]] += out->grad[i];
    });
  }
  return out;
}

TensorPtr slice_rows(Tape* tape, const TensorPtr& x, int r0, int r1) {
  if (x->shape.size() != 2) throw std::invalid_argument("slice_rows: rank-2 required");
  const int n = x->shape[0], d = x->shape[1];
  if (r0 < 0 || r1 > n || r0 >= r1) throw std::invalid_argument("slice_rows: bad range");
  auto out = make_out({r1 - r0, d}, x->requires_grad);
  std::copy_n(x->data.data() + static_cast<size_t>(r0) * d, static_cast<size_t>(r1 - r0) * d,
              out->data.data());
  if (tape && out->requires_grad) {
    tape->record(out, [x, out, r0, d] {
      x->ensure_grad();
      const size_t len = out->grad.size();
      double* dst = x->grad.data() + static_cast<size_t>(r0) * d;
      for (size_t i = 0; i < len; ++i) dst[i] += out->grad[i];
    });
  }
  return out;
}

TensorPtr slice_cols(Tape* tape, const TensorPtr& x, int c0, int c1) {
  if (x->shape.size() != 2) throw std::invalid_argument("slice_cols: rank-2 required");
  const int n = x->shape[0], d = x->shape[1];
  if (c0 < 0 || c1 > d || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
  const int w = c1 - c0;
  auto out = make_out({n, w}, x->requires_grad);
  for (int i = 0; i < n; ++i)
    std::copy_n(x->data.data() + static_cast<size_t>(i) * d + c0, w,
                out->data.data() + static_cast<size_t>(i) * w);
  if (tape && out->requires_grad) {
    tape->record(out, [x, out, c0, d, w, n] {
      x->ensure_grad();
      for (int i = 0; i < n; ++i) {
        double* dst = x->grad.data() + static_cast<size_t>(i) * d + c0;
        const double* src = out->grad.data() + static_cast<size_t>(i) * w;
        for (int j = 0; j < w; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

TensorPtr concat_rows(Tape* tape, const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const int d = parts[0]->cols();
  int total = 0;
  bool needs = false;
  for (const auto& p : parts) {
    if (p->shape.size() != 2 || p->shape[1] != d)
      throw std::invalid_argument("concat_rows: column mismatch");
    total += p->shape[0];
    needs = needs || p->requires_grad;
  }
  auto out = make_out({total, d}, needs);
  size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p->data.begin(), p->data.end(), out->data.begin() + off);
    off += p->data.size();
  }
  if (tape && needs) {
    tape->record(out, [parts, out] {
      size_t off = 0;
      for (const auto& p : parts) {
        if (p->requires_grad) {
          p->ensure_grad();
          for (size_t i = 0; i < p->data.size(); ++i) p->grad[i] += out->grad[off + i];
        }
        off += p->data.size();
      }
    });
  }
  return out;
}

TensorPtr concat_cols(Tape* tape, const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const int n = parts[0]->rows();
  int total = 0;
  bool needs = false;
  for (const auto& p : parts) {
    if (p->shape.size() != 2 || p->shape[0] != n)
      throw std::invalid_argument("concat_cols: row mismatch");
    total += p->shape[1];
    needs = needs || p->requires_grad;
  }
  auto out = make_out({n, total}, needs);
  int coff = 0;
  for (const auto& p : parts) {
    const int w = p->shape[1];
    for (int i = 0; i < n; ++i)
      std::copy_n(p->data.data() + static_cast<size_t>(i) * w, w,
                  out->data.data() + static_cast<size_t>(i) * total + coff);
    coff += w;
  }
  if (tape && needs) {
    tape->record(out, [parts, out, n, total] {
      int coff = 0;
      for (const auto& p : parts) {
        const int w = p->shape[1];
        if (p->requires_grad) {
          p->ensure_grad();
          for (int i = 0; i < n; ++i) {
            const double* src = out->grad.data() + static_cast<size_t>(i) * total + coff;
            double* dst = p->grad.data() + static_cast<size_t>(i) * w;
            for (int j = 0; j < w; ++j) dst[j] += src[j];
          }
        }
        coff += w;
      }
    });
  }
  return out;
}

TensorPtr add_rowvec(Tape* tape, const TensorPtr& x, const TensorPtr& b) {
  if (x->shape.size() != 2 || b->numel() != x->shape[1])
    throw std::invalid_argument("add_rowvec: shape mismatch");
  const int n = x->shape[0], d = x->shape[1];
  auto out = make_out(x->shape, grad_needed({&x, &b}));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      out->data[static_cast<size_t>(i) * d + j] = x->data[static_cast<size_t>(i) * d + j] + b->data[j];
  if (tape && out->requires_grad) {
    tape->record(out, [x, b, out, n, d] {
      if (x->requires_grad) {
        x->ensure_grad();
        for (size_t i = 0; i < x->data.size(); ++i) x->grad[i] += out->grad[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < d; ++j) b->grad[j] += out->grad[static_cast<size_t>(i) * d + j];
      }
    });
  }
  return out;
}

bool all_finite(const Tensor& t) {
  for (double v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace rlvr::ad
