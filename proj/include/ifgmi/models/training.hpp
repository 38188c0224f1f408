#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ifgmi/core/adam.hpp"
#include "ifgmi/data/synthetic.hpp"
#include "ifgmi/models/classifier.hpp"
#include "ifgmi/models/generator.hpp"

namespace ifgmi::models {

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Inference helpers

/// Applies `fn` to consecutive slices of `inputs` without recording.
template <class T, class Fn>
Tensor<T> batched(const Tensor<T>& inputs, std::size_t batch, Fn fn) {
  const std::size_t n = inputs.dim(0);
  std::vector<Tensor<T>> parts;
  for (std::size_t start = 0; start < n; start += batch) {
    std::vector<std::size_t> rows(std::min(batch, n - start));
    std::iota(rows.begin(), rows.end(), start);
    Tensor<T> slice = index_rows(inputs.detach(), rows);
    parts.push_back(fn(slice));
  }
  return concat_rows(parts);
}

template <class T>
Tensor<T> predict_logits(const Classifier<T>& model, const Tensor<T>& images, std::size_t batch = 128) {
  return batched(images, batch, [&](const Tensor<T>& x) { return model.logits(x); });
}

template <class T>
Tensor<T> extract_features(const Classifier<T>& model, const Tensor<T>& images, std::size_t batch = 128) {
  return batched(images, batch, [&](const Tensor<T>& x) { return model.features(x); });
}

template <class T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  const std::size_t n = logits.dim(0), m = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m; ++j)
      if (logits[i * m + j] > logits[i * m + best]) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

template <class T>
double accuracy(const Classifier<T>& model, const data::LabeledImages& set) {
  if (set.size() == 0) return 0;
  const auto pred = argmax_rows(predict_logits(model, set.images.template cast<T>()));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == set.labels[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  std::vector<std::size_t> idx(labels.begin(), labels.end());
  return mul_scalar(mean(gather_cols(log_softmax(logits), idx)), T(-1));
}

// ---------------------------------------------------------------------------
// Classifier training

struct ClassifierTraining {
  std::size_t epochs = 30;
  std::size_t batch = 32;
  AdamHyper adam{1e-3, 0.9, 0.999, 1e-8};
  int max_shift = 2;  // random translation in pixels
};

struct ClassifierReport {
  double train_accuracy = 0;
  double test_accuracy = 0;
  std::vector<double> epoch_loss;
  bool usable() const { return test_accuracy >= 0.5; }
};

namespace detail {
// Random horizontal flip and translation with edge replication.
inline void jitter_image(const float* src, float* dst, bool flip, int sx, int sy) {
  constexpr int s = static_cast<int>(data::kSize);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        int xx = std::clamp(x - sx, 0, s - 1), yy = std::clamp(y - sy, 0, s - 1);
        if (flip) xx = s - 1 - xx;
        dst[(c * s + y) * s + x] = src[(c * s + yy) * s + xx];
      }
}
}  // namespace detail

template <class T>
ClassifierReport train_classifier(Classifier<T>& model, const data::LabeledImages& train,
                                  const data::LabeledImages& test, const ClassifierTraining& opts, std::uint64_t seed) {
  Rng rng(seed);
  auto params = model.parameters();
  set_trainable(params, true);
  Adam<T> opt(opts.adam);
  for (auto& [name, p] : params) opt.add(name, p);

  ClassifierReport report;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += opts.batch) {
      const std::size_t b = std::min(opts.batch, order.size() - start);
      Tensor<T> x(Shape{b, 3, data::kSize, data::kSize});
      std::vector<int> y(b);
      std::vector<float> tmp(data::kPixels);
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t src = order[start + i];
        const bool flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
        const int sx = std::uniform_int_distribution<int>(-opts.max_shift, opts.max_shift)(rng);
        const int sy = std::uniform_int_distribution<int>(-opts.max_shift, opts.max_shift)(rng);
        detail::jitter_image(train.images.data().data() + src * data::kPixels, tmp.data(), flip, sx, sy);
        std::copy(tmp.begin(), tmp.end(), x.data_mut().begin() + static_cast<std::ptrdiff_t>(i * data::kPixels));
        y[i] = train.labels[src];
      }
      Tape<T> tape;
      TapeScope<T> scope(tape);
      auto loss = cross_entropy(model.logits(x), y);
      if (!std::isfinite(static_cast<double>(loss.item())))
        throw TrainingDiverged("train_classifier: non-finite loss at epoch " + std::to_string(epoch));
      tape.backward(loss);
      opt.step();
      loss_sum += static_cast<double>(loss.item());
      ++batches;
    }
    report.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
  }
  set_trainable(params, false);
  report.train_accuracy = accuracy(model, train);
  report.test_accuracy = accuracy(model, test);
  return report;
}

// ---------------------------------------------------------------------------
// GAN prior training

enum class GanLoss { non_saturating, hinge };

struct PriorTraining {
  std::size_t epochs = 30;
  std::size_t batch = 32;
  AdamHyper adam{2e-3, 0.0, 0.99, 1e-8};
  double mapping_lr_scale = 0.1;
  GanLoss loss = GanLoss::non_saturating;
  double r1_gamma = 1.0;
  std::size_t r1_interval = 8;
  double r1_fd_step = 1e-2;
  double ema_decay = 0.995;
  std::size_t divergence_window = 200;
  double divergence_floor = 1e-3;
  std::function<void(std::size_t step, double d_loss, double g_loss)> on_step;
};

struct PriorReport {
  std::size_t steps = 0;
  std::vector<double> d_loss;  // per-epoch means
  std::vector<double> g_loss;
};

template <class T>
Tensor<T> sample_latents(std::size_t n, std::size_t dim, Rng& rng) {
  Tensor<T> z(Shape{n, dim});
  for (auto& v : z.data_mut()) v = normal<T>(rng);
  return z;
}

/// Per-sample input gradients of the summed discriminator score. Parameter
/// gradients are left untouched.
template <class T>
Tensor<T> discriminator_input_grad(const Discriminator<T>& disc, const Tensor<T>& images) {
  auto params = disc.parameters();
  std::vector<bool> flags;
  for (auto& [name, p] : params) {
    flags.push_back(p.requires_grad());
    p.set_requires_grad(false);
  }
  auto x = images.clone();
  x.set_requires_grad();
  {
    Tape<T> tape;
    TapeScope<T> scope(tape);
    tape.backward(sum(disc(x)));
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].second.set_requires_grad(flags[i]);
  return Tensor<T>(x.shape(), x.grad());
}

/// R1 value mean_i ||grad_x D(x_i)||^2.
template <class T>
double r1_value(const Discriminator<T>& disc, const Tensor<T>& images) {
  auto g = discriminator_input_grad(disc, images);
  double acc = 0;
  for (T v : g.data()) acc += static_cast<double>(v) * static_cast<double>(v);
  return acc / static_cast<double>(images.dim(0));
}

/// Surrogate whose parameter gradient equals that of R1 up to O(step^2):
/// d/dtheta ||g||^2 = 2 ||g|| d/dtheta [u . grad_x D] with u = g/||g|| held
/// fixed, and u . grad_x D is replaced by a central difference along u.
/// Must be called with a tape active; the input gradient pass runs on its
/// own tape.
template <class T>
Tensor<T> r1_surrogate(const Discriminator<T>& disc, const Tensor<T>& images, double step) {
  const Tensor<T> g = discriminator_input_grad(disc, images);
  const std::size_t n = images.dim(0), stride = images.size() / n;
  Tensor<T> plus(images.shape()), minus(images.shape());
  std::vector<T> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double nrm = 0;
    for (std::size_t k = 0; k < stride; ++k) nrm += static_cast<double>(g[i * stride + k]) * g[i * stride + k];
    nrm = std::sqrt(nrm);
    norms[i] = static_cast<T>(nrm);
    const double inv = nrm > 0 ? 1.0 / nrm : 0.0;
    for (std::size_t k = 0; k < stride; ++k) {
      const double u = g[i * stride + k] * inv;
      plus.data_mut()[i * stride + k] = static_cast<T>(images[i * stride + k] + step * u);
      minus.data_mut()[i * stride + k] = static_cast<T>(images[i * stride + k] - step * u);
    }
  }
  auto dd = mul_scalar(sub(disc(plus), disc(minus)), static_cast<T>(1.0 / (2.0 * step)));  // [N, 1]
  Tensor<T> weights(Shape{n, 1}, std::vector<T>(norms.begin(), norms.end()));
  return mul_scalar(sum(mul(dd, weights)), static_cast<T>(2.0 / static_cast<double>(n)));
}

template <class T>
struct PriorModels {
  Generator<T> generator;      // exponential moving average of the trained weights
  Discriminator<T> discriminator;
};

template <class T>
PriorModels<T> train_prior(const Tensor<float>& public_images, const GeneratorConfig& gcfg,
                           const DiscriminatorConfig& dcfg, const PriorTraining& opts, std::uint64_t seed,
                           PriorReport* report_out = nullptr) {
  const std::size_t n = public_images.dim(0);
  if (n < 500) throw std::invalid_argument("train_prior: need at least 500 public images, got " + std::to_string(n));
  Rng rng(derive_seed(seed, "prior/stream"));
  Generator<T> gen(gcfg, derive_seed(seed, "prior/generator"));
  Discriminator<T> disc(dcfg, derive_seed(seed, "prior/discriminator"));
  Generator<T> ema = gen.template cast<T>();

  auto gp = gen.parameters();
  auto dp = disc.parameters();
  auto ep = ema.parameters();
  AdamHyper map_hp = opts.adam;
  map_hp.lr *= opts.mapping_lr_scale;
  Adam<T> g_map_opt(map_hp), g_opt(opts.adam), d_opt(opts.adam);
  for (auto& [name, p] : gp) (name.rfind("mapping", 0) == 0 ? g_map_opt : g_opt).add(name, p);
  for (auto& [name, p] : dp) d_opt.add(name, p);

  auto d_objective = [&](const Tensor<T>& real_logits, const Tensor<T>& fake_logits) {
    if (opts.loss == GanLoss::hinge)
      return add(mean(leaky_relu(add_scalar(mul_scalar(real_logits, T(-1)), T(1)), T(0))),
                 mean(leaky_relu(add_scalar(fake_logits, T(1)), T(0))));
    return add(mean(softplus(mul_scalar(real_logits, T(-1)))), mean(softplus(fake_logits)));
  };

  PriorReport report;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t low_streak = 0;
  const std::size_t steps_per_epoch = n / opts.batch;
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double d_sum = 0, g_sum = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(s * opts.batch),
                                    order.begin() + static_cast<std::ptrdiff_t>((s + 1) * opts.batch));
      Tensor<T> real = data::take(public_images, rows).template cast<T>();

      // Discriminator step.
      set_trainable(gp, false);
      set_trainable(dp, true);
      Tensor<T> fake = gen(sample_latents<T>(opts.batch, gcfg.z_dim, rng));
      double d_loss_v = 0;
      {
        Tape<T> tape;
        TapeScope<T> scope(tape);
        auto d_loss = d_objective(disc(real), disc(fake.detach()));
        d_loss_v = static_cast<double>(d_loss.item());
        if (report.steps % opts.r1_interval == 0 && opts.r1_gamma > 0) {
          auto r1 = r1_surrogate(disc, real, opts.r1_fd_step);
          d_loss = add(d_loss, mul_scalar(r1, static_cast<T>(0.5 * opts.r1_gamma * static_cast<double>(opts.r1_interval))));
        }
        if (!std::isfinite(d_loss_v))
          throw TrainingDiverged("train_prior: non-finite discriminator loss at step " + std::to_string(report.steps));
        tape.backward(d_loss);
      }
      d_opt.step();

      // Generator step.
      set_trainable(dp, false);
      set_trainable(gp, true);
      double g_loss_v = 0;
      {
        Tape<T> tape;
        TapeScope<T> scope(tape);
        auto fake_logits = disc(gen(sample_latents<T>(opts.batch, gcfg.z_dim, rng)));
        auto g_loss = opts.loss == GanLoss::hinge ? mean(mul_scalar(fake_logits, T(-1)))
                                                  : mean(softplus(mul_scalar(fake_logits, T(-1))));
        g_loss_v = static_cast<double>(g_loss.item());
        if (!std::isfinite(g_loss_v))
          throw TrainingDiverged("train_prior: non-finite generator loss at step " + std::to_string(report.steps));
        tape.backward(g_loss);
      }
      g_opt.step();
      g_map_opt.step();

      for (std::size_t i = 0; i < gp.size(); ++i) {
        auto src = gp[i].second.data();
        auto dst = ep[i].second.data_mut();
        const T beta = static_cast<T>(opts.ema_decay);
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = beta * dst[k] + (T(1) - beta) * src[k];
      }

      low_streak = d_loss_v < opts.divergence_floor ? low_streak + 1 : 0;
      if (low_streak >= opts.divergence_window) {
        std::ostringstream os;
        os << "train_prior: discriminator loss below " << opts.divergence_floor << " for " << low_streak
           << " consecutive steps (step " << report.steps << ", last d_loss " << d_loss_v << ", g_loss " << g_loss_v
           << ")";
        throw TrainingDiverged(os.str());
      }
      if (opts.on_step) opts.on_step(report.steps, d_loss_v, g_loss_v);
      d_sum += d_loss_v;
      g_sum += g_loss_v;
      ++report.steps;
    }
    report.d_loss.push_back(d_sum / static_cast<double>(std::max<std::size_t>(1, steps_per_epoch)));
    report.g_loss.push_back(g_sum / static_cast<double>(std::max<std::size_t>(1, steps_per_epoch)));
  }
  set_trainable(gp, false);
  set_trainable(dp, false);
  if (report_out) *report_out = report;
  return {ema, disc};
}

}  // namespace ifgmi::models
