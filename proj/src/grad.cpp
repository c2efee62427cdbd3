#include "tcbp/grad.hpp"

#include <cmath>
#include <stdexcept>

#include "tcbp/fft.hpp"

namespace tcbp::ad {

Tensor::Tensor(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) {
    throw std::invalid_argument("Tensor: " + std::to_string(data.size()) +
                                " values do not fill " + std::to_string(r) + "x" +
                                std::to_string(c));
  }
}

Tensor Tensor::column(std::vector<double> values) {
  const auto n = values.size();
  return Tensor(n, 1, std::move(values));
}

std::string Tensor::shape_string() const {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

Param::Param(std::string n, Tensor v, bool apply_decay)
    : name(std::move(n)), value(std::move(v)), grad(value.rows, value.cols), decay(apply_decay) {}

void Param::zero_grad() {
  if (!grad.same_shape(value)) grad = Tensor(value.rows, value.cols);
  std::fill(grad.data.begin(), grad.data.end(), 0.0);
}

// ---------------------------------------------------------------------- Tape

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id_ >= nodes_.size()) throw std::out_of_range("Tape: invalid Var");
  return nodes_[v.id_];
}

Tape::Node& Tape::node(Var v) {
  if (!v.valid() || v.id_ >= nodes_.size()) throw std::out_of_range("Tape: invalid Var");
  return nodes_[v.id_];
}

Var Tape::input(Tensor value) {
  Node n;
  n.op = "input";
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(nodes_.size() - 1);
}

Var Tape::param(Param& p) {
  for (const auto& [ptr, id] : bound_params_) {
    if (ptr == &p) return Var(id);
  }
  if (!p.grad.same_shape(p.value)) p.zero_grad();
  Node n;
  n.op = "param";
  n.ref = &p.value;
  n.param = &p;
  nodes_.push_back(std::move(n));
  bound_params_.emplace_back(&p, nodes_.size() - 1);
  return Var(nodes_.size() - 1);
}

Var Tape::frozen(const Tensor& value) {
  Node n;
  n.op = "frozen";
  n.ref = &value;
  nodes_.push_back(std::move(n));
  return Var(nodes_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, Backward backward) {
  Node n;
  n.op = op;
  n.owned = std::move(value);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(nodes_.size() - 1);
}

const Tensor& Tape::value(Var v) const {
  const auto& n = node(v);
  return n.ref ? *n.ref : n.owned;
}

const Tensor* Tape::grad(Var v) const {
  const auto& n = node(v);
  if (n.param) return &n.param->grad;
  return n.has_grad ? &n.grad : nullptr;
}

Tensor& Tape::grad_buffer(Var v) {
  auto& n = node(v);
  if (n.param) return n.param->grad;
  if (!n.has_grad) {
    const auto& val = n.ref ? *n.ref : n.owned;
    n.grad = Tensor(val.rows, val.cols);
    n.has_grad = true;
  }
  return n.grad;
}

const char* Tape::op_name(Var v) const { return node(v).op; }

void Tape::backward(Var out, const Tensor& seed) {
  if (nodes_.empty()) throw std::logic_error("backward: empty tape");
  const auto& out_value = value(out);
  if (!seed.same_shape(out_value)) {
    throw std::logic_error("backward: seed shape " + seed.shape_string() +
                           " does not match output shape " + out_value.shape_string() +
                           " of node " + std::to_string(out.id()) + " (" + node(out).op + ")");
  }
  auto& g = grad_buffer(out);
  for (std::size_t k = 0; k < g.size(); ++k) g.data[k] += seed.data[k];

  for (std::size_t id = out.id() + 1; id-- > 0;) {
    auto& n = nodes_[id];
    if (!n.backward || !n.has_grad) continue;
    n.backward(*this, n.grad);
    const auto& val = n.ref ? *n.ref : n.owned;
    if (!n.grad.same_shape(val)) {
      throw std::logic_error("backward: gradient shape drifted at node " + std::to_string(id) +
                             " (" + n.op + ")");
    }
  }
}

void Tape::backward(Var scalar_out) {
  const auto& v = value(scalar_out);
  if (v.rows != 1 || v.cols != 1) {
    throw std::logic_error("backward: implicit seed needs a 1x1 output, node " +
                           std::to_string(scalar_out.id()) + " is " + v.shape_string());
  }
  backward(scalar_out, Tensor::scalar(1.0));
}

// ---------------------------------------------------------------- operations

namespace {

void require(bool ok, const char* op, const std::string& msg) {
  if (!ok) throw std::invalid_argument(std::string(op) + ": " + msg);
}

template <typename F, typename D>
Var elementwise(Tape& tape, Var x, const char* op, F forward_fn, D derivative) {
  const auto& xv = tape.value(x);
  Tensor out(xv.rows, xv.cols);
  for (std::size_t k = 0; k < xv.size(); ++k) out.data[k] = forward_fn(xv.data[k]);
  return tape.record(op, std::move(out), [x, derivative](Tape& t, const Tensor& g) {
    const auto& xv = t.value(x);
    auto& gx = t.grad_buffer(x);
    for (std::size_t k = 0; k < g.size(); ++k) gx.data[k] += g.data[k] * derivative(xv.data[k]);
  });
}

}  // namespace

Var matmul(Tape& tape, Var w, Var x) {
  const auto& wv = tape.value(w);
  const auto& xv = tape.value(x);
  require(wv.cols == xv.rows, "matmul",
          "inner dimensions differ: " + wv.shape_string() + " * " + xv.shape_string());
  const std::size_t m = wv.rows, n = wv.cols, k = xv.cols;
  Tensor out(m, k);
  for (std::size_t i = 0; i < m; ++i) {
    const double* wrow = &wv.data[i * n];
    double* orow = &out.data[i * k];
    for (std::size_t p = 0; p < n; ++p) {
      const double a = wrow[p];
      const double* xrow = &xv.data[p * k];
      for (std::size_t j = 0; j < k; ++j) orow[j] += a * xrow[j];
    }
  }
  return tape.record("matmul", std::move(out), [w, x](Tape& t, const Tensor& g) {
    const auto& wv = t.value(w);
    const auto& xv = t.value(x);
    const std::size_t m = wv.rows, n = wv.cols, k = xv.cols;
    auto& gw = t.grad_buffer(w);
    for (std::size_t i = 0; i < m; ++i) {
      const double* grow = &g.data[i * k];
      double* gwrow = &gw.data[i * n];
      for (std::size_t p = 0; p < n; ++p) {
        const double* xrow = &xv.data[p * k];
        double acc = 0.0;
        for (std::size_t j = 0; j < k; ++j) acc += grow[j] * xrow[j];
        gwrow[p] += acc;
      }
    }
    auto& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < m; ++i) {
      const double* wrow = &wv.data[i * n];
      const double* grow = &g.data[i * k];
      for (std::size_t p = 0; p < n; ++p) {
        const double a = wrow[p];
        double* gxrow = &gx.data[p * k];
        for (std::size_t j = 0; j < k; ++j) gxrow[j] += a * grow[j];
      }
    }
  });
}

Var add_bias(Tape& tape, Var y, Var b) {
  const auto& yv = tape.value(y);
  const auto& bv = tape.value(b);
  require(bv.rows == yv.rows && bv.cols == 1, "add_bias",
          "bias " + bv.shape_string() + " does not fit " + yv.shape_string());
  Tensor out = yv;
  for (std::size_t i = 0; i < yv.rows; ++i) {
    for (std::size_t j = 0; j < yv.cols; ++j) out(i, j) += bv.data[i];
  }
  return tape.record("add_bias", std::move(out), [y, b](Tape& t, const Tensor& g) {
    auto& gy = t.grad_buffer(y);
    for (std::size_t k = 0; k < g.size(); ++k) gy.data[k] += g.data[k];
    auto& gb = t.grad_buffer(b);
    for (std::size_t i = 0; i < g.rows; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < g.cols; ++j) acc += g(i, j);
      gb.data[i] += acc;
    }
  });
}

Var add(Tape& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  require(av.same_shape(bv), "add", av.shape_string() + " vs " + bv.shape_string());
  Tensor out = av;
  for (std::size_t k = 0; k < out.size(); ++k) out.data[k] += bv.data[k];
  return tape.record("add", std::move(out), [a, b](Tape& t, const Tensor& g) {
    auto& ga = t.grad_buffer(a);
    for (std::size_t k = 0; k < g.size(); ++k) ga.data[k] += g.data[k];
    auto& gb = t.grad_buffer(b);
    for (std::size_t k = 0; k < g.size(); ++k) gb.data[k] += g.data[k];
  });
}

Var scale(Tape& tape, Var x, double factor) {
  Tensor out = tape.value(x);
  for (auto& v : out.data) v *= factor;
  return tape.record("scale", std::move(out), [x, factor](Tape& t, const Tensor& g) {
    auto& gx = t.grad_buffer(x);
    for (std::size_t k = 0; k < g.size(); ++k) gx.data[k] += factor * g.data[k];
  });
}

Var relu(Tape& tape, Var x) {
  return elementwise(
      tape, x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var abs(Tape& tape, Var x) {
  return elementwise(
      tape, x, "abs", [](double v) { return std::fabs(v); },
      [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var signed_sqrt(Tape& tape, Var x) {
  return elementwise(
      tape, x, "signed_sqrt",
      [](double v) { return v >= 0.0 ? std::sqrt(v) : -std::sqrt(-v); },
      [](double v) { return 0.5 / std::sqrt(std::max(std::fabs(v), kSignedSqrtClamp)); });
}

Var l2_normalize(Tape& tape, Var x) {
  const auto& xv = tape.value(x);
  double sq = 0.0;
  for (double v : xv.data) sq += v * v;
  const double norm = std::sqrt(sq);
  const double denom = norm + kL2Epsilon;
  Tensor out = xv;
  for (auto& v : out.data) v /= denom;
  return tape.record("l2_normalize", std::move(out), [x, norm, denom](Tape& t, const Tensor& g) {
    const auto& xv = t.value(x);
    auto& gx = t.grad_buffer(x);
    double xg = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) xg += xv.data[k] * g.data[k];
    const double coupling = norm > 0.0 ? xg / (norm * denom * denom) : 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      gx.data[k] += g.data[k] / denom - xv.data[k] * coupling;
    }
  });
}

Var sum_pool(Tape& tape, Var x) {
  const auto& xv = tape.value(x);
  Tensor out(xv.rows, 1);
  for (std::size_t i = 0; i < xv.rows; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < xv.cols; ++j) acc += xv(i, j);
    out.data[i] = acc;
  }
  return tape.record("sum_pool", std::move(out), [x](Tape& t, const Tensor& g) {
    auto& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < gx.rows; ++i) {
      for (std::size_t j = 0; j < gx.cols; ++j) gx(i, j) += g.data[i];
    }
  });
}

Var flatten_columns(Tape& tape, Var x) {
  const auto& xv = tape.value(x);
  const std::size_t m = xv.rows, k = xv.cols;
  Tensor out(m * k, 1);
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t i = 0; i < m; ++i) out.data[t * m + i] = xv(i, t);
  }
  return tape.record("flatten_columns", std::move(out), [x, m, k](Tape& tp, const Tensor& g) {
    auto& gx = tp.grad_buffer(x);
    for (std::size_t t = 0; t < k; ++t) {
      for (std::size_t i = 0; i < m; ++i) gx(i, t) += g.data[t * m + i];
    }
  });
}

Var count_sketch(Tape& tape, Var x, std::span<const std::uint32_t> h,
                 std::span<const std::int8_t> s, std::size_t dim) {
  const auto& xv = tape.value(x);
  require(h.size() == xv.rows && s.size() == xv.rows * xv.cols, "count_sketch",
          "hash/sign sizes do not match input " + xv.shape_string());
  const std::size_t cols = xv.cols;
  Tensor out(dim, 1);
  for (std::size_t i = 0; i < xv.rows; ++i) {
    require(h[i] < dim, "count_sketch", "hash index out of [0, d)");
    double acc = 0.0;
    for (std::size_t t = 0; t < cols; ++t) acc += static_cast<double>(s[i * cols + t]) * xv(i, t);
    out.data[h[i]] += acc;
  }
  return tape.record("count_sketch", std::move(out), [x, h, s, cols](Tape& t, const Tensor& g) {
    auto& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < gx.rows; ++i) {
      const double gj = g.data[h[i]];
      for (std::size_t c = 0; c < cols; ++c) gx(i, c) += static_cast<double>(s[i * cols + c]) * gj;
    }
  });
}

Var circular_convolve(Tape& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  require(av.same_shape(bv) && av.cols == 1, "circular_convolve",
          "expected equal column vectors, got " + av.shape_string() + " and " + bv.shape_string());
  auto out = Tensor::column(fft::circular_convolve(av.data, bv.data));
  return tape.record("circular_convolve", std::move(out), [a, b](Tape& t, const Tensor& g) {
    const auto ga_delta = fft::circular_correlate(g.data, t.value(b).data);
    const auto gb_delta = fft::circular_correlate(g.data, t.value(a).data);
    auto& ga = t.grad_buffer(a);
    for (std::size_t k = 0; k < ga_delta.size(); ++k) ga.data[k] += ga_delta[k];
    auto& gb = t.grad_buffer(b);
    for (std::size_t k = 0; k < gb_delta.size(); ++k) gb.data[k] += gb_delta[k];
  });
}

Var tcbp(Tape& tape, Var x, const SketchParams& params) {
  const auto& xv = tape.value(x);
  FeatureMap map(xv.rows, xv.cols, xv.data);
  auto proj = tcbp_project(map, params);
  std::vector<double> acc(params.dim(), 0.0);
  const auto v = fft::circular_convolve(proj.u1, proj.u2);
  for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += v[k];
  return tape.record(
      "tcbp", Tensor::column(std::move(acc)),
      [x, &params, u1 = std::move(proj.u1), u2 = std::move(proj.u2)](Tape& t, const Tensor& g) {
        const auto g1 = fft::circular_correlate(g.data, u2);
        const auto g2 = fft::circular_correlate(g.data, u1);
        const auto h1 = params.h1();
        const auto h2 = params.h2();
        const auto s1 = params.s1();
        const auto s2 = params.s2();
        auto& gx = t.grad_buffer(x);
        const std::size_t cols = gx.cols;
        for (std::size_t i = 0; i < gx.rows; ++i) {
          for (std::size_t c = 0; c < cols; ++c) {
            gx(i, c) += static_cast<double>(s1[i * cols + c]) * g1[h1[i]] +
                        static_cast<double>(s2[i * cols + c]) * g2[h2[i]];
          }
        }
      });
}

Var cbp(Tape& tape, Var x, const SketchParams& params) {
  const auto& xv = tape.value(x);
  require(params.mode() == SketchMode::CBP, "cbp", "sketch params are not in CBP mode");
  require(xv.rows == params.channels(), "cbp",
          "input has " + std::to_string(xv.rows) + " channels, sketch expects " +
              std::to_string(params.channels()));
  const std::size_t dim = params.dim();
  const std::size_t cols = xv.cols;
  std::vector<std::vector<double>> u1(cols), u2(cols);
  std::vector<double> acc(dim, 0.0);
  std::vector<double> col(xv.rows);
  for (std::size_t t = 0; t < cols; ++t) {
    for (std::size_t i = 0; i < xv.rows; ++i) col[i] = xv(i, t);
    u1[t] = tcbp::count_sketch<double>(col, params.h1(), params.s1(), dim);
    u2[t] = tcbp::count_sketch<double>(col, params.h2(), params.s2(), dim);
    const auto v = fft::circular_convolve(u1[t], u2[t]);
    for (std::size_t k = 0; k < dim; ++k) acc[k] += v[k];
  }
  return tape.record(
      "cbp", Tensor::column(std::move(acc)),
      [x, &params, u1 = std::move(u1), u2 = std::move(u2)](Tape& t, const Tensor& g) {
        const auto h1 = params.h1();
        const auto h2 = params.h2();
        const auto s1 = params.s1();
        const auto s2 = params.s2();
        auto& gx = t.grad_buffer(x);
        for (std::size_t c = 0; c < gx.cols; ++c) {
          const auto g1 = fft::circular_correlate(g.data, u2[c]);
          const auto g2 = fft::circular_correlate(g.data, u1[c]);
          for (std::size_t i = 0; i < gx.rows; ++i) {
            gx(i, c) += static_cast<double>(s1[i]) * g1[h1[i]] +
                        static_cast<double>(s2[i]) * g2[h2[i]];
          }
        }
      });
}

Var pair_loss(Tape& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  require(av.same_shape(bv), "pair_loss", av.shape_string() + " vs " + bv.shape_string());
  double loss = 0.0;
  for (std::size_t k = 0; k < av.size(); ++k) {
    const double diff = av.data[k] - bv.data[k];
    if (diff > 0.0) loss += diff * diff;
  }
  return tape.record("pair_loss", Tensor::scalar(loss), [a, b](Tape& t, const Tensor& g) {
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    auto& ga = t.grad_buffer(a);
    auto& gb = t.grad_buffer(b);
    const double seed = g.data[0];
    for (std::size_t k = 0; k < av.size(); ++k) {
      const double diff = av.data[k] - bv.data[k];
      if (diff > 0.0) {
        const double d = 2.0 * diff * seed;
        ga.data[k] += d;
        gb.data[k] -= d;
      }
    }
  });
}

Var margin_hinge(Tape& tape, Var loss, double margin) {
  const auto& lv = tape.value(loss);
  require(lv.rows == 1 && lv.cols == 1, "margin_hinge", "expects a 1x1 loss");
  const double slack = margin - lv.data[0];
  return tape.record("margin_hinge", Tensor::scalar(slack > 0.0 ? slack : 0.0),
                     [loss, active = slack > 0.0](Tape& t, const Tensor& g) {
                       if (active) t.grad_buffer(loss).data[0] -= g.data[0];
                     });
}

}  // namespace tcbp::ad
