#pragma once

// Intermediate-feature inversion: initial latent selection, a w-only stage,
// then L stages that optimise the feature at successive split points of the
// synthesis stack jointly with w, each kept inside an l1 ball around its
// stage anchor. The two baselines (pixel and z-space inversion) live here
// too since they share the loss and optimiser plumbing.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "ifgmi/attack/augment.hpp"
#include "ifgmi/attack/poincare.hpp"
#include "ifgmi/attack/projection.hpp"
#include "ifgmi/core/adam.hpp"
#include "ifgmi/models/classifier.hpp"
#include "ifgmi/models/generator.hpp"
#include "ifgmi/models/training.hpp"

namespace ifgmi::attack {

enum class Confidence { softmax, logit };
enum class FinalStrategy { last, best_confidence };

inline std::string to_string(FinalStrategy s) { return s == FinalStrategy::last ? "last" : "best-confidence"; }

inline FinalStrategy strategy_from_string(const std::string& s) {
  if (s == "last") return FinalStrategy::last;
  if (s == "best-confidence") return FinalStrategy::best_confidence;
  throw std::invalid_argument("unknown final-selection strategy '" + s + "' (expected last | best-confidence)");
}

inline std::string to_string(Confidence c) { return c == Confidence::softmax ? "softmax" : "logit"; }

inline Confidence confidence_from_string(const std::string& s) {
  if (s == "softmax") return Confidence::softmax;
  if (s == "logit") return Confidence::logit;
  throw std::invalid_argument("unknown confidence mode '" + s + "' (expected softmax | logit)");
}

struct AttackConfig {
  std::size_t L = 3;
  std::vector<std::size_t> split_points;  // empty: 1..L
  std::vector<std::size_t> steps{40, 10, 10, 10};
  std::vector<double> radii{0.5, 1.0, 1.5};  // per element; r[i] = radii[i] * dim(f_i)
  std::size_t candidates = 200;
  std::size_t select = 20;
  std::size_t n_aug = 8;
  AdamHyper adam{};
  double lambda = 0;  // discriminator realism weight, z-space baseline only
  std::size_t pixel_steps = 300;
  std::size_t latent_steps = 70;
  FinalStrategy final_strategy = FinalStrategy::best_confidence;
  Confidence confidence = Confidence::softmax;
  std::size_t batch = 20;  // candidates optimised together
  std::size_t threads = 1;

  std::vector<std::size_t> splits() const {
    if (!split_points.empty()) return split_points;
    std::vector<std::size_t> s(L);
    std::iota(s.begin(), s.end(), 1);
    return s;
  }

  void validate(std::size_t num_blocks) const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("AttackConfig: " + m); };
    if (steps.size() != L + 1)
      fail("steps has " + std::to_string(steps.size()) + " entries, expected L+1 = " + std::to_string(L + 1));
    if (radii.size() != L)
      fail("radii has " + std::to_string(radii.size()) + " entries, expected L = " + std::to_string(L));
    for (std::size_t i = 0; i < radii.size(); ++i) {
      if (!(radii[i] >= 0)) fail("radius " + std::to_string(i) + " is negative");
      if (i && radii[i] < radii[i - 1]) fail("radii must be non-decreasing");
    }
    if (select == 0 || select > candidates) fail("select count must be in [1, candidates]");
    if (n_aug == 0) fail("n_aug must be at least 1");
    if (batch == 0) fail("batch must be at least 1");
    const auto s = splits();
    if (s.size() != L) fail("split_points has " + std::to_string(s.size()) + " entries, expected L");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] < 1 || s[i] > num_blocks)
        fail("split point " + std::to_string(s[i]) + " outside 1.." + std::to_string(num_blocks));
      if (i && s[i] <= s[i - 1]) fail("split points must be strictly increasing");
    }
  }

  /// The same run cut after stage l: stages 0..l behave identically.
  AttackConfig truncated(std::size_t l) const {
    if (l > L) throw std::invalid_argument("AttackConfig::truncated: " + std::to_string(l) + " > L");
    AttackConfig c = *this;
    const auto s = splits();
    c.L = l;
    c.split_points.assign(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(l));
    c.steps.resize(l + 1);
    c.radii.resize(l);
    return c;
  }
};

/// Worst post-step constraint state of one optimiser step over a batch.
struct AuditEntry {
  std::size_t stage = 0, step = 0, batch = 0;
  double radius = 0;
  double max_f_l1 = 0, max_w_l1 = 0;
  std::size_t violations = 0;
};

template <class T>
struct AttackResult {
  int target_class = 0;
  std::vector<std::size_t> splits;
  std::vector<double> initial_scores;         // robust confidence of the selected latents
  std::vector<double> candidate_scores;       // all candidates, index order
  std::vector<Tensor<T>> snapshots;           // after each stage, [S, 3, 32, 32]
  std::vector<std::vector<double>> stage_loss;  // [stage][candidate] loss at stage end
  std::vector<double> initial_loss;           // [candidate] loss before stage 0
  std::vector<std::vector<double>> trajectory;  // [stage][step] mean loss over live candidates
  std::vector<std::vector<double>> snapshot_scores;  // [stage][candidate] robust confidence
  std::vector<std::size_t> chosen_stage;      // per candidate
  Tensor<T> final_images;
  std::vector<bool> failed;
  std::vector<AuditEntry> audit;

  std::size_t failures() const { return static_cast<std::size_t>(std::count(failed.begin(), failed.end(), true)); }
  std::size_t violations() const {
    std::size_t v = 0;
    for (const auto& a : audit) v += a.violations;
    return v;
  }
};

// ---------------------------------------------------------------------------
// Confidence scoring

/// Mean class-c confidence over a list of views of the same images.
template <class T, class Model>
std::vector<double> robust_confidence_views(const Model& model, const std::vector<Tensor<T>>& views, int c,
                                            Confidence mode = Confidence::softmax) {
  if (views.empty()) throw std::invalid_argument("robust_confidence: no views");
  const std::size_t n = views.front().dim(0);
  std::vector<double> score(n, 0.0);
  for (const auto& v : views) {
    Tensor<T> logits = models::batched(v, 128, [&](const Tensor<T>& x) { return model.logits(x); });
    Tensor<T> conf = mode == Confidence::softmax ? softmax(logits) : logits;
    const std::size_t k = conf.dim(1);
    for (std::size_t i = 0; i < n; ++i) score[i] += static_cast<double>(conf[i * k + static_cast<std::size_t>(c)]);
  }
  for (auto& s : score) s /= static_cast<double>(views.size());
  return score;
}

template <class T, class Model>
std::vector<double> robust_confidence(const Model& model, const Tensor<T>& images, int c, std::size_t n_aug,
                                      std::uint64_t seed, Confidence mode = Confidence::softmax) {
  if (n_aug == 0) throw std::invalid_argument("robust_confidence: n_aug must be at least 1");
  std::vector<Tensor<T>> views;
  for (std::size_t v = 0; v < n_aug; ++v) views.push_back(augment(images, derive_seed(seed, "view", v)));
  return robust_confidence_views(model, views, c, mode);
}

/// Indices of the `count` highest scores, best first; ties go to the lower
/// index.
inline std::vector<std::size_t> top_indices(const std::vector<double>& scores, std::size_t count) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(std::min(count, idx.size()));
  return idx;
}

template <class T>
struct InitialSelection {
  Tensor<T> w;                       // [select, w_dim]
  std::vector<std::size_t> indices;  // candidate index of each selected row
  std::vector<double> scores;        // selected scores, best first
  std::vector<double> all_scores;    // every candidate, index order
};

template <class T>
Tensor<T> render(const models::Generator<T>& gen, const Tensor<T>& w, std::size_t batch = 50) {
  return models::batched(w, batch, [&](const Tensor<T>& x) { return gen.synthesis.full(x); });
}

template <class T>
InitialSelection<T> initial_select(const models::Generator<T>& gen, const models::Classifier<T>& model, int c,
                                   std::size_t candidates, std::size_t select, std::uint64_t seed,
                                   std::size_t n_aug = 8, Confidence mode = Confidence::softmax) {
  if (select > candidates)
    throw std::invalid_argument("initial_select: select count " + std::to_string(select) + " exceeds candidates " +
                                std::to_string(candidates));
  Rng rng(derive_seed(seed, "latents"));
  auto z = models::sample_latents<T>(candidates, gen.config.z_dim, rng);
  auto w = models::batched(z, 100, [&](const Tensor<T>& x) { return gen.map(x); });
  InitialSelection<T> out;
  out.all_scores = robust_confidence(model, render(gen, w), c, n_aug, derive_seed(seed, "select-aug"), mode);
  out.indices = top_indices(out.all_scores, select);
  for (auto i : out.indices) out.scores.push_back(out.all_scores[i]);
  out.w = index_rows(w, out.indices);
  return out;
}

// ---------------------------------------------------------------------------
// Projected Adam over a set of per-candidate variables

template <class T>
struct StageVariable {
  Tensor<T> value;            // [B, ...], requires grad during the stage
  Tensor<T> anchor;           // same shape; ignored when radius < 0
  AdamState<T> state;
  std::string name;
};

struct StageLog {
  std::vector<double> mean_loss;  // per step, over live candidates
  std::vector<AuditEntry> audit;
};

/// Runs `steps` Adam iterations on the variables, minimising the summed
/// per-row loss from `forward`. A row whose loss goes non-finite is marked
/// failed and frozen. With radius >= 0 every variable is projected back onto
/// its l1 ball after each step and the post-step distances are audited.
template <class T>
StageLog run_projected_stage(std::vector<StageVariable<T>>& vars, std::size_t steps, const AdamHyper& hp,
                             double radius, std::vector<bool>& failed,
                             const std::function<Tensor<T>()>& forward, std::size_t stage = 0,
                             const std::function<void(std::span<T>, std::size_t)>& post_step = nullptr) {
  StageLog log;
  const std::size_t rows = failed.size();
  for (auto& v : vars) v.value.set_requires_grad(true);
  for (std::size_t step = 0; step < steps; ++step) {
    Tape<T> tape;
    Tensor<T> per_row;
    {
      TapeScope<T> scope(tape);
      per_row = forward();
    }
    double total = 0;
    std::size_t live = 0;
    for (std::size_t i = 0; i < rows; ++i) {
      const double l = static_cast<double>(per_row[i]);
      if (!std::isfinite(l)) failed[i] = true;
      if (failed[i]) continue;
      total += l;
      ++live;
    }
    log.mean_loss.push_back(live ? total / static_cast<double>(live) : std::numeric_limits<double>::quiet_NaN());
    {
      TapeScope<T> scope(tape);
      tape.backward(sum(per_row));
    }
    AuditEntry audit{stage, step, 0, radius, 0, 0, 0};
    for (auto& v : vars) {
      const std::size_t stride = v.value.size() / rows;
      std::vector<T> grad = v.value.grad();
      std::vector<T> saved(v.value.data().begin(), v.value.data().end());
      for (std::size_t i = 0; i < rows; ++i)
        if (failed[i]) std::fill_n(grad.begin() + static_cast<std::ptrdiff_t>(i * stride), stride, T(0));
      adam_step<T>(v.value.data_mut(), grad, v.state, hp, v.name);
      v.value.zero_grad();
      auto data = v.value.data_mut();
      for (std::size_t i = 0; i < rows; ++i)
        if (failed[i]) std::copy_n(saved.begin() + static_cast<std::ptrdiff_t>(i * stride), stride, data.begin() + static_cast<std::ptrdiff_t>(i * stride));
      if (post_step) post_step(data, rows);
      if (radius < 0) continue;
      project_l1_rows<T>(data, v.anchor.data(), rows, radius);
      double worst = 0;
      for (std::size_t i = 0; i < rows; ++i) {
        const double d = l1_distance<T>(v.value.data().subspan(i * stride, stride), v.anchor.data().subspan(i * stride, stride));
        worst = std::max(worst, d);
        if (d > radius * (1 + 1e-6)) ++audit.violations;
      }
      (v.name == "f" ? audit.max_f_l1 : audit.max_w_l1) = worst;
    }
    if (radius >= 0) log.audit.push_back(audit);
  }
  for (auto& v : vars) v.value.set_requires_grad(false);
  return log;
}

template <class T>
std::vector<double> to_doubles(const Tensor<T>& t) {
  return std::vector<double>(t.data().begin(), t.data().end());
}

template <class T>
std::vector<double> identity_loss(const models::Classifier<T>& model, const Tensor<T>& images, int c) {
  return to_doubles(poincare_loss_rows(model.logits(images.detach()), std::vector<int>(images.dim(0), c)));
}

// ---------------------------------------------------------------------------
// Stage 0: unconstrained w optimisation

template <class T>
StageLog optimize_latent_stage(Tensor<T>& w, const models::SynthesisStack<T>& synth, const models::Classifier<T>& model,
                               int c, std::size_t steps, const AdamHyper& hp, std::vector<bool>& failed) {
  const std::vector<int> classes(w.dim(0), c);
  std::vector<StageVariable<T>> vars{{w, Tensor<T>(), {}, "w"}};
  auto log = run_projected_stage<T>(vars, steps, hp, -1.0, failed,
                                    [&] { return poincare_loss_rows(model.logits(synth.full(vars[0].value)), classes); });
  w = vars[0].value;
  return log;
}

// ---------------------------------------------------------------------------
// Full pipeline for one batch of candidates

template <class T>
struct BatchOutcome {
  std::vector<Tensor<T>> snapshots;
  std::vector<std::vector<double>> stage_loss;
  std::vector<double> initial_loss;
  std::vector<std::vector<double>> trajectory;
  std::vector<AuditEntry> audit;
  std::vector<bool> failed;
};

template <class T>
BatchOutcome<T> optimize_batch(const models::SynthesisStack<T>& synth, const Tensor<T>& w_init,
                               const models::Classifier<T>& model, int c, const AttackConfig& cfg) {
  const std::size_t b = w_init.dim(0);
  const std::vector<int> classes(b, c);
  const auto splits = cfg.splits();
  BatchOutcome<T> out;
  out.failed.assign(b, false);

  Tensor<T> w = w_init.clone();
  out.initial_loss = identity_loss(model, synth.full(w), c);
  auto log0 = optimize_latent_stage(w, synth, model, c, cfg.steps[0], cfg.adam, out.failed);
  out.trajectory.push_back(log0.mean_loss);
  out.snapshots.push_back(synth.full(w));
  out.stage_loss.push_back(identity_loss(model, out.snapshots.back(), c));

  // f carries the optimised feature at the previous split (the constant
  // before stage 1).
  Tensor<T> f = synth.broadcast_constant(b);
  std::size_t prev_split = 0;
  for (std::size_t i = 1; i <= cfg.L; ++i) {
    const std::size_t split = splits[i - 1];
    const Shape expect = synth.feature_shape(split);
    Tensor<T> anchor_f = synth.run_blocks(f, w, prev_split, split);
    if (Shape(anchor_f.shape().begin() + 1, anchor_f.shape().end()) != expect)
      throw ShapeError("optimize_intermediate: anchor at split " + std::to_string(split) + " has shape " +
                       shape_str(anchor_f.shape()) + ", expected per-sample " + shape_str(expect));
    const double radius = cfg.radii[i - 1] * static_cast<double>(numel(expect));
    std::vector<StageVariable<T>> vars{{anchor_f.clone(), anchor_f, {}, "f"}, {w.clone(), w.clone(), {}, "w"}};
    auto log = run_projected_stage<T>(
        vars, cfg.steps[i], cfg.adam, radius, out.failed,
        [&] { return poincare_loss_rows(model.logits(synth.suffix(vars[0].value, vars[1].value, split)), classes); },
        i);
    f = vars[0].value;
    w = vars[1].value;
    prev_split = split;
    out.trajectory.push_back(log.mean_loss);
    out.audit.insert(out.audit.end(), log.audit.begin(), log.audit.end());
    out.snapshots.push_back(synth.suffix(f, w, split));
    out.stage_loss.push_back(identity_loss(model, out.snapshots.back(), c));
  }
  return out;
}

/// Per-candidate pick among stage snapshots. "best-confidence" scores every
/// snapshot with the same augmentation draws and keeps the highest (earliest
/// stage on ties); "last" takes the final stage.
template <class T>
Tensor<T> select_final(const std::vector<Tensor<T>>& snapshots, const models::Classifier<T>& model, int c,
                       FinalStrategy strategy, std::size_t n_aug, std::uint64_t seed,
                       std::vector<std::size_t>* chosen = nullptr, std::vector<std::vector<double>>* scores = nullptr,
                       Confidence mode = Confidence::softmax) {
  if (snapshots.empty()) throw std::invalid_argument("select_final: no snapshots");
  const std::size_t n = snapshots.front().dim(0), stride = snapshots.front().size() / n;
  std::vector<std::vector<double>> conf;
  if (strategy == FinalStrategy::best_confidence || scores)
    for (const auto& s : snapshots) conf.push_back(robust_confidence(model, s, c, n_aug, seed, mode));
  std::vector<std::size_t> pick(n, snapshots.size() - 1);
  if (strategy == FinalStrategy::best_confidence)
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t s = 1; s < snapshots.size(); ++s)
        if (conf[s][i] > conf[best][i]) best = s;
      pick[i] = best;
    }
  Tensor<T> out(snapshots.front().shape());
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(snapshots[pick[i]].data().begin() + static_cast<std::ptrdiff_t>(i * stride), stride,
                out.data_mut().begin() + static_cast<std::ptrdiff_t>(i * stride));
  if (chosen) *chosen = pick;
  if (scores) *scores = conf;
  return out;
}

/// Runs `fn(i)` for i in [0, n) on up to `threads` workers. Each index is
/// handled by exactly one worker, so results written per index are
/// independent of scheduling.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

template <class T>
Tensor<T> rows_of(const Tensor<T>& x, std::size_t start, std::size_t count) {
  std::vector<std::size_t> r(count);
  std::iota(r.begin(), r.end(), start);
  return index_rows(x.detach(), r);
}

/// Initial selection, stage 0 and L intermediate stages for one class.
template <class T>
AttackResult<T> optimize_intermediate(const models::Generator<T>& gen, const models::Classifier<T>& model, int c,
                                      const AttackConfig& cfg, std::uint64_t seed) {
  cfg.validate(gen.synthesis.num_blocks());
  AttackResult<T> res;
  res.target_class = c;
  res.splits = cfg.splits();
  auto init = initial_select(gen, model, c, cfg.candidates, cfg.select, derive_seed(seed, "initial", static_cast<std::uint64_t>(c)),
                             cfg.n_aug, cfg.confidence);
  res.initial_scores = init.scores;
  res.candidate_scores = init.all_scores;

  const std::size_t s = cfg.select;
  const std::size_t nb = (s + cfg.batch - 1) / cfg.batch;
  std::vector<BatchOutcome<T>> outcomes(nb);
  parallel_for(nb, cfg.threads, [&](std::size_t bi) {
    const std::size_t start = bi * cfg.batch, count = std::min(cfg.batch, s - start);
    outcomes[bi] = optimize_batch(gen.synthesis, rows_of(init.w, start, count), model, c, cfg);
  });

  for (std::size_t st = 0; st <= cfg.L; ++st) {
    std::vector<Tensor<T>> parts;
    std::vector<double> losses, traj(cfg.steps[st], 0.0);
    std::vector<double> traj_n(cfg.steps[st], 0.0);
    for (std::size_t bi = 0; bi < nb; ++bi) {
      const auto& o = outcomes[bi];
      parts.push_back(o.snapshots[st]);
      losses.insert(losses.end(), o.stage_loss[st].begin(), o.stage_loss[st].end());
      const double live = static_cast<double>(std::count(o.failed.begin(), o.failed.end(), false));
      for (std::size_t k = 0; k < cfg.steps[st]; ++k)
        if (std::isfinite(o.trajectory[st][k])) {
          traj[k] += o.trajectory[st][k] * live;
          traj_n[k] += live;
        }
    }
    for (std::size_t k = 0; k < traj.size(); ++k) traj[k] = traj_n[k] > 0 ? traj[k] / traj_n[k] : 0.0;
    res.snapshots.push_back(concat_rows(parts));
    res.stage_loss.push_back(losses);
    res.trajectory.push_back(traj);
  }
  for (std::size_t bi = 0; bi < nb; ++bi) {
    const auto& o = outcomes[bi];
    res.initial_loss.insert(res.initial_loss.end(), o.initial_loss.begin(), o.initial_loss.end());
    res.failed.insert(res.failed.end(), o.failed.begin(), o.failed.end());
    for (auto a : o.audit) {
      a.batch = bi;
      res.audit.push_back(a);
    }
  }
  res.final_images = select_final(res.snapshots, model, c, cfg.final_strategy, cfg.n_aug,
                                  derive_seed(seed, "final-aug", static_cast<std::uint64_t>(c)), &res.chosen_stage,
                                  &res.snapshot_scores, cfg.confidence);
  return res;
}

/// Derives the result of the same run stopped after stage l. Bit-identical
/// to running with cfg.truncated(l), since stages 0..l and the selection
/// draws do not depend on later stages.
template <class T>
AttackResult<T> truncate_result(const AttackResult<T>& full, std::size_t l, FinalStrategy strategy) {
  if (l + 1 > full.snapshots.size()) throw std::invalid_argument("truncate_result: stage beyond run");
  AttackResult<T> r = full;
  r.splits.resize(l);
  r.snapshots.resize(l + 1);
  r.stage_loss.resize(l + 1);
  r.trajectory.resize(l + 1);
  r.snapshot_scores.resize(std::min(r.snapshot_scores.size(), l + 1));
  std::erase_if(r.audit, [l](const AuditEntry& a) { return a.stage > l; });
  const std::size_t n = r.snapshots.front().dim(0), stride = r.snapshots.front().size() / n;
  r.final_images = Tensor<T>(r.snapshots.front().shape());
  r.chosen_stage.assign(n, l);
  for (std::size_t i = 0; i < n; ++i) {
    if (strategy == FinalStrategy::best_confidence) {
      std::size_t best = 0;
      for (std::size_t s = 1; s <= l; ++s)
        if (r.snapshot_scores[s][i] > r.snapshot_scores[best][i]) best = s;
      r.chosen_stage[i] = best;
    }
    std::copy_n(r.snapshots[r.chosen_stage[i]].data().begin() + static_cast<std::ptrdiff_t>(i * stride), stride,
                r.final_images.data_mut().begin() + static_cast<std::ptrdiff_t>(i * stride));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Baselines

/// Adam directly on pixels from uniform noise, clamped to [-1, 1] after
/// every step.
template <class T>
Tensor<T> baseline_pixel_inversion(const models::Classifier<T>& model, int c, std::size_t count, std::size_t steps,
                                   std::uint64_t seed, const AdamHyper& hp = {}) {
  Rng rng(derive_seed(seed, "pixel-init", static_cast<std::uint64_t>(c)));
  Tensor<T> x(Shape{count, data::kChannels, data::kSize, data::kSize});
  for (auto& v : x.data_mut()) v = uniform<T>(rng, T(-1), T(1));
  std::vector<bool> failed(count, false);
  const std::vector<int> classes(count, c);
  std::vector<StageVariable<T>> vars{{x, Tensor<T>(), {}, "pixels"}};
  run_projected_stage<T>(
      vars, steps, hp, -1.0, failed, [&] { return poincare_loss_rows(model.logits(vars[0].value), classes); }, 0,
      [](std::span<T> d, std::size_t) {
        for (auto& v : d) v = std::clamp(v, T(-1), T(1));
      });
  return vars[0].value.detach();
}

/// Adam over z through the full generator; lambda > 0 adds the
/// discriminator realism term softplus(-D(G(z))).
template <class T>
Tensor<T> baseline_latent_inversion(const models::Generator<T>& gen, const models::Classifier<T>& model, int c,
                                    std::size_t count, std::size_t steps, double lambda, std::uint64_t seed,
                                    const AdamHyper& hp = {}, const models::Discriminator<T>* disc = nullptr) {
  if (lambda > 0 && !disc) throw std::invalid_argument("baseline_latent_inversion: lambda > 0 needs a discriminator");
  Rng rng(derive_seed(seed, "latent-init", static_cast<std::uint64_t>(c)));
  auto z = models::sample_latents<T>(count, gen.config.z_dim, rng);
  std::vector<bool> failed(count, false);
  const std::vector<int> classes(count, c);
  std::vector<StageVariable<T>> vars{{z, Tensor<T>(), {}, "z"}};
  run_projected_stage<T>(vars, steps, hp, -1.0, failed, [&] {
    auto img = gen(vars[0].value);
    auto loss = poincare_loss_rows(model.logits(img), classes);
    if (lambda > 0)
      loss = add(loss, mul_scalar(reshape(softplus(mul_scalar((*disc)(img), T(-1))), {count}), static_cast<T>(lambda)));
    return loss;
  });
  return render(gen, gen.map(vars[0].value.detach()));
}

}  // namespace ifgmi::attack
