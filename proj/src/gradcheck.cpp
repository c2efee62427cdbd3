#include "tcbp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "tcbp/binary_io.hpp"
#include "tcbp/encoder.hpp"
#include "tcbp/sketch.hpp"

namespace tcbp::gradcheck {

using ad::Tape;
using ad::Tensor;
using ad::Var;

double max_relative_error(const Case& c, const Options& options, Rng& rng) {
  auto evaluate = [&](const std::vector<Tensor>& inputs, Tape& tape) {
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.input(t));
    return std::pair{vars, c.build(tape, vars)};
  };

  Tape tape;
  const auto [vars, out] = evaluate(c.inputs, tape);
  const auto& out_value = tape.value(out);
  Tensor cotangent(out_value.rows, out_value.cols);
  for (auto& v : cotangent.data) v = rng.normal();
  tape.backward(out, cotangent);

  auto project = [&](const std::vector<Tensor>& inputs) {
    Tape t;
    const auto [unused, o] = evaluate(inputs, t);
    const auto& v = t.value(o);
    double acc = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) acc += cotangent.data[k] * v.data[k];
    return acc;
  };

  double worst = 0.0;
  auto inputs = c.inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor* analytic = tape.grad(vars[k]);
    for (std::size_t e = 0; e < inputs[k].size(); ++e) {
      const double saved = inputs[k].data[e];
      inputs[k].data[e] = saved + options.step;
      const double plus = project(inputs);
      inputs[k].data[e] = saved - options.step;
      const double minus = project(inputs);
      inputs[k].data[e] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic ? analytic->data[e] : 0.0;
      const double denom =
          std::max({std::fabs(a), std::fabs(numeric), options.denominator_floor});
      worst = std::max(worst, std::fabs(a - numeric) / denom);
    }
  }
  return worst;
}

Result run(const OpCheck& check, const Options& options) {
  Result r;
  r.op = check.name;
  Rng rng(derive_seed(options.seed, crc64(std::span(reinterpret_cast<const std::uint8_t*>(check.name.data()), check.name.size()))));
  for (std::size_t k = 0; k < options.instances; ++k) {
    const auto c = check.make(rng);
    for (const auto& t : c.inputs) r.entries += t.size();
    r.max_rel_error = std::max(r.max_rel_error, max_relative_error(c, options, rng));
    ++r.instances;
  }
  r.passed = r.max_rel_error < options.tolerance;
  return r;
}

namespace {

Tensor normal_tensor(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor t(rows, cols);
  for (auto& v : t.data) v = rng.normal();
  return t;
}

// Entries bounded away from zero, random sign, so kinks are out of reach of the step.
Tensor away_from_zero(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
  Tensor t(rows, cols);
  for (auto& v : t.data) v = rng.sign() * rng.uniform(lo, hi);
  return t;
}

template <typename F>
OpCheck unary(std::string name, std::size_t rows, std::size_t cols, F op, double lo = 0.0,
              double hi = 0.0) {
  return {std::move(name), [=](Rng& rng) {
            Case c;
            c.inputs.push_back(hi > 0.0 ? away_from_zero(rng, rows, cols, lo, hi)
                                        : normal_tensor(rng, rows, cols));
            c.build = [op](Tape& t, std::span<const Var> v) { return op(t, v[0]); };
            return c;
          }};
}

std::size_t small_dim(Rng& rng) { return 1 + static_cast<std::size_t>(rng.uniform_index(9)); }

OpCheck sketch_check(const std::string& name, SketchMode mode) {
  return {name, [mode](Rng& rng) {
            const std::size_t c = 2 + rng.uniform_index(5);
            const std::size_t t = 1 + rng.uniform_index(3);
            const std::size_t d = small_dim(rng);
            auto params =
                std::make_shared<SketchParams>(SketchParams::generate(c, t, d, rng.next_u64(), mode));
            Case cs;
            cs.inputs.push_back(normal_tensor(rng, c, t));
            cs.build = [params, mode](Tape& tp, std::span<const Var> v) {
              return mode == SketchMode::TCBP ? ad::tcbp(tp, v[0], *params)
                                              : ad::cbp(tp, v[0], *params);
            };
            return cs;
          }};
}

// Smallest distance to a kink (signed sqrt at 0, relu at 0, abs at 0) seen
// in one forward pass of the encoder.
double kink_distance(const Tape& tape, const ClipVars& v) {
  double dist = std::numeric_limits<double>::infinity();
  for (double x : tape.value(v.encoded).data) dist = std::min(dist, std::fabs(x));
  for (double x : tape.value(v.v_clip).data) dist = std::min(dist, std::fabs(x));
  for (double x : tape.value(v.phi_pre).data) dist = std::min(dist, std::fabs(x));
  return dist;
}

// In TCBP a reduce-layer bias adds the same value to every segment of its
// channel, so it reaches the sketch scaled by sum_t s[i,t]. When that sum is
// zero in both sketches the bias has no effect at all: its gradient is an
// exact 0 and finite differences only see roundoff. Such draws are skipped.
bool has_silent_bias(const EncoderModel& model) {
  const SketchParams* sk = model.sketch();
  if (!sk || sk->mode() != SketchMode::TCBP) return false;
  const std::size_t t = sk->sign_columns();
  for (std::size_t i = 0; i < sk->channels(); ++i) {
    int sum1 = 0;
    int sum2 = 0;
    for (std::size_t j = 0; j < t; ++j) {
      sum1 += sk->s1()[i * t + j];
      sum2 += sk->s2()[i * t + j];
    }
    if (sum1 == 0 && sum2 == 0) return true;
  }
  return false;
}

OpCheck full_model_check(const std::string& name, EncodingMethod method) {
  return {name, [method](Rng& rng) {
            for (int attempt = 0; attempt < 1000; ++attempt) {
              EncoderConfig cfg;
              cfg.modalities = {{Modality::A, 2}, {Modality::P, 4}};  // c = 6
              cfg.method = method;
              cfg.segments = 2;
              cfg.reduce_dim = 4;
              cfg.sketch_dim = 8;
              cfg.hidden_dim = 6;
              cfg.embed_dim = 5;
              cfg.seed = rng.next_u64();
              auto model = std::make_shared<EncoderModel>(cfg);
              if (has_silent_bias(*model)) continue;
              // Non-zero biases so the bias paths carry gradient too.
              for (auto* p : model->params()) {
                if (!p->decay) {
                  for (auto& v : p->value.data) v = 0.1 * rng.normal();
                }
              }
              std::vector<FeatureMap> clips;
              for (int k = 0; k < 3; ++k) {
                std::vector<double> data(12);
                for (auto& x : data) x = rng.normal();
                clips.emplace_back(6, 2, std::move(data));
              }

              Case cs;
              for (const auto* p : model->params()) cs.inputs.push_back(p->value);
              auto forward = [model, clips](Tape& tp, std::span<const Var> v,
                                            std::vector<ClipVars>* trace) {
                BoundParams b;
                b.reduce_w = v[0];
                b.reduce_b = v[1];
                b.w1 = v[2];
                b.b1 = v[3];
                b.w2 = v[4];
                b.b2 = v[5];
                std::vector<Var> phis;
                for (const auto& x : clips) {
                  auto cv = encode_on_tape(tp, *model, b, x);
                  if (trace) trace->push_back(cv);
                  phis.push_back(cv.phi);
                }
                return phis;
              };

              Tape probe;
              std::vector<Var> probe_vars;
              for (const auto& t : cs.inputs) probe_vars.push_back(probe.input(t));
              std::vector<ClipVars> trace;
              const auto phis = forward(probe, probe_vars, &trace);
              double dist = std::numeric_limits<double>::infinity();
              for (const auto& cv : trace) dist = std::min(dist, kink_distance(probe, cv));
              if (dist < 1e-2) continue;
              const double neg_loss = probe.value(ad::pair_loss(probe, phis[0], phis[2])).data[0];
              const double margin = neg_loss + 1.0;  // keeps the hinge active

              // The ordering losses only see differences of phis, so bias
              // gradients can be exactly zero and finite differences return
              // pure roundoff. A random linear readout of each phi removes
              // that invariance.
              std::vector<Tensor> readouts;
              for (int k = 0; k < 3; ++k) readouts.push_back(normal_tensor(rng, 1, cfg.embed_dim));
              cs.build = [forward, margin, readouts](Tape& tp, std::span<const Var> v) {
                const auto phis = forward(tp, v, nullptr);
                const auto pos = ad::pair_loss(tp, phis[0], phis[1]);
                const auto neg = ad::margin_hinge(tp, ad::pair_loss(tp, phis[0], phis[2]), margin);
                auto total = ad::add(tp, pos, neg);
                for (std::size_t k = 0; k < phis.size(); ++k) {
                  total = ad::add(tp, total, ad::matmul(tp, tp.input(readouts[k]), phis[k]));
                }
                return total;
              };
              return cs;
            }
            throw std::runtime_error("gradcheck: could not draw a kink-free model instance");
          }};
}

}  // namespace

std::vector<OpCheck> registered_ops() {
  std::vector<OpCheck> ops;
  ops.push_back({"matmul", [](Rng& rng) {
                   const std::size_t m = small_dim(rng), n = small_dim(rng), k = 1 + rng.uniform_index(3);
                   Case c;
                   c.inputs = {normal_tensor(rng, m, n), normal_tensor(rng, n, k)};
                   c.build = [](Tape& t, std::span<const Var> v) { return ad::matmul(t, v[0], v[1]); };
                   return c;
                 }});
  ops.push_back({"add_bias", [](Rng& rng) {
                   const std::size_t m = small_dim(rng), k = 1 + rng.uniform_index(3);
                   Case c;
                   c.inputs = {normal_tensor(rng, m, k), normal_tensor(rng, m, 1)};
                   c.build = [](Tape& t, std::span<const Var> v) { return ad::add_bias(t, v[0], v[1]); };
                   return c;
                 }});
  ops.push_back({"add", [](Rng& rng) {
                   const std::size_t m = small_dim(rng);
                   Case c;
                   c.inputs = {normal_tensor(rng, m, 2), normal_tensor(rng, m, 2)};
                   c.build = [](Tape& t, std::span<const Var> v) { return ad::add(t, v[0], v[1]); };
                   return c;
                 }});
  ops.push_back(unary("scale", 4, 2, [](Tape& t, Var x) { return ad::scale(t, x, -0.37); }));
  ops.push_back(unary("relu", 6, 2, [](Tape& t, Var x) { return ad::relu(t, x); }, 0.1, 1.0));
  ops.push_back(unary("abs", 6, 2, [](Tape& t, Var x) { return ad::abs(t, x); }, 0.1, 1.0));
  ops.push_back(unary("signed_sqrt", 6, 2,
                      [](Tape& t, Var x) { return ad::signed_sqrt(t, x); }, 0.1, 2.0));
  ops.push_back(unary("l2_normalize", 7, 1, [](Tape& t, Var x) { return ad::l2_normalize(t, x); }));
  ops.push_back(unary("sum_pool", 4, 3, [](Tape& t, Var x) { return ad::sum_pool(t, x); }));
  ops.push_back(unary("flatten_columns", 3, 4,
                      [](Tape& t, Var x) { return ad::flatten_columns(t, x); }));
  ops.push_back({"count_sketch", [](Rng& rng) {
                   const std::size_t c = 2 + rng.uniform_index(5), t = 1 + rng.uniform_index(3);
                   const std::size_t d = small_dim(rng);
                   auto h = std::make_shared<std::vector<std::uint32_t>>(c);
                   auto s = std::make_shared<std::vector<std::int8_t>>(c * t);
                   for (auto& v : *h) v = static_cast<std::uint32_t>(rng.uniform_index(d));
                   for (auto& v : *s) v = static_cast<std::int8_t>(rng.sign());
                   Case cs;
                   cs.inputs = {normal_tensor(rng, c, t)};
                   cs.build = [h, s, d](Tape& tp, std::span<const Var> v) {
                     return ad::count_sketch(tp, v[0], *h, *s, d);
                   };
                   return cs;
                 }});
  ops.push_back({"circular_convolve", [](Rng& rng) {
                   const std::size_t d = small_dim(rng);
                   Case c;
                   c.inputs = {normal_tensor(rng, d, 1), normal_tensor(rng, d, 1)};
                   c.build = [](Tape& t, std::span<const Var> v) {
                     return ad::circular_convolve(t, v[0], v[1]);
                   };
                   return c;
                 }});
  ops.push_back(sketch_check("tcbp", SketchMode::TCBP));
  ops.push_back(sketch_check("cbp", SketchMode::CBP));
  ops.push_back({"pair_loss", [](Rng& rng) {
                   const std::size_t m = small_dim(rng);
                   Tensor a(m, 1), b(m, 1);
                   for (std::size_t k = 0; k < m; ++k) {
                     b.data[k] = rng.uniform(0.0, 2.0);
                     a.data[k] = std::max(0.0, b.data[k] + rng.sign() * rng.uniform(0.05, 1.0));
                   }
                   Case c;
                   c.inputs = {a, b};
                   c.build = [](Tape& t, std::span<const Var> v) { return ad::pair_loss(t, v[0], v[1]); };
                   return c;
                 }});
  ops.push_back({"margin_hinge", [](Rng& rng) {
                   Case c;
                   // Half the draws sit on the active side of the margin.
                   c.inputs = {Tensor::scalar(rng.uniform(0.0, 0.4))};
                   if (std::fabs(c.inputs[0].data[0] - 0.2) < 0.01) c.inputs[0].data[0] = 0.1;
                   c.build = [](Tape& t, std::span<const Var> v) {
                     return ad::margin_hinge(t, v[0], 0.2);
                   };
                   return c;
                 }});
  ops.push_back(full_model_check("full_model_tcbp", EncodingMethod::TCBP));
  ops.push_back(full_model_check("full_model_cbp", EncodingMethod::CBP));
  ops.push_back(full_model_check("full_model_meanpool", EncodingMethod::MeanPool));
  ops.push_back(full_model_check("full_model_concat", EncodingMethod::ConcatT_MLP));
  return ops;
}

OpCheck faulty_op() {
  return {"faulty_relu", [](Rng& rng) {
            Case c;
            c.inputs.push_back(away_from_zero(rng, 5, 1, 0.1, 1.0));
            c.build = [](Tape& t, std::span<const Var> v) {
              const auto& xv = t.value(v[0]);
              Tensor out = xv;
              for (auto& x : out.data) x = std::max(0.0, x);
              return t.record("faulty_relu", std::move(out), [x = v[0]](Tape& tp, const Tensor& g) {
                auto& gx = tp.grad_buffer(x);
                // Wrong on purpose: passes the gradient through the inactive side too.
                for (std::size_t k = 0; k < g.size(); ++k) gx.data[k] += g.data[k];
              });
            };
            return c;
          }};
}

}  // namespace tcbp::gradcheck
