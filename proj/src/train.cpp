#include "meftlab/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>

#include "meftlab/adam.hpp"
#include "meftlab/model.hpp"
#include "meftlab/ops.hpp"

namespace meftlab {
namespace {

std::size_t argmax(const Tensor& logits) {
  const auto v = logits.data();
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<SideInput> prepare_all(FineTuneModel& model, const Dataset& data, const TrainSpec& spec) {
  std::vector<SideInput> out(data.size());
  const long count = static_cast<long>(data.size());
#pragma omp parallel if (!spec.deterministic)
  {
    Engine engine(spec.precision);
    engine.set_parallel_kernels(false);
#pragma omp for schedule(static)
    for (long i = 0; i < count; ++i) {
      out[static_cast<std::size_t>(i)] = model.prepare(engine, data.items[static_cast<std::size_t>(i)].x);
    }
  }
  return out;
}

std::string lr_text(double lr) {
  std::ostringstream s;
  s << lr;
  return s.str();
}

}  // namespace

StepMeasure train_sample(Engine& engine, FineTuneModel& model, const Sample& sample,
                         const SideInput* side, double loss_scale) {
  engine.clear_tape();
  engine.reset_accounting();
  Tensor logits;
  if (model.method().is_meft()) {
    if (!side) throw std::invalid_argument("train_sample: MEFT methods need a prepared side input");
    logits = model.logits_from(engine, *side);
  } else {
    logits = model.logits(engine, sample.x);
  }
  // The loss belongs to the head so that backbone visit counts see only the encoder.
  Engine::Tag tag(engine, Owner::Head, -1);
  const Tensor loss = ops::cross_entropy(engine, logits, {sample.label});
  StepMeasure m;
  m.loss = loss.item();
  if (!std::isfinite(m.loss)) {
    engine.clear_tape();
    return m;
  }
  engine.backward(ops::scale(engine, loss, loss_scale));
  m.peak_retained_bytes = engine.peak_retained_bytes();
  const BackwardStats& st = engine.last_backward();
  m.backward_flops = st.flops;
  m.backbone_nodes = st.visited(Owner::Backbone);
  m.side_nodes = st.visited(Owner::Side);
  m.head_nodes = st.visited(Owner::Head);
  m.backbone_layers = st.backbone_layers_visited;
  return m;
}

StepMeasure measure_step(const ModelConfig& cfg, const MethodSpec& method, std::uint64_t seed,
                         Precision precision) {
  FineTuneModel model(cfg, method, seed);
  Engine engine(precision);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> dist(0.0, 1.0);
  Buffer x(static_cast<std::size_t>(cfg.seq_len) * static_cast<std::size_t>(cfg.d_input));
  for (double& v : x) v = dist(rng);
  const Sample sample{Tensor({static_cast<std::size_t>(cfg.seq_len), static_cast<std::size_t>(cfg.d_input)}, x), 0};
  std::optional<SideInput> side;
  if (method.is_meft()) side = model.prepare(engine, sample.x);
  return train_sample(engine, model, sample, side ? &*side : nullptr, 1.0);
}

void TrainSpec::validate() const {
  if (lr_grid.empty()) throw ConfigError("train.lr_grid must not be empty");
  for (double lr : lr_grid)
    if (!(lr > 0.0)) throw ConfigError("train.lr_grid values must be > 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
}

TrainReport train(const ModelConfig& cfg, const MethodSpec& method, const Split& data,
                  const TrainSpec& spec) {
  spec.validate();
  if (data.train.size() == 0 || data.eval.size() == 0) throw std::invalid_argument("train: empty split");

  FineTuneModel model(cfg, method, spec.seed);
  const std::size_t elem = spec.precision == Precision::F32 ? 4 : 8;

  TrainReport report;
  report.method = method.label();
  report.total_params = model.params().total_params();
  report.trainable_params = model.params().trainable_params();
  report.trainable_ratio_pct = model.params().trainable_ratio_pct();

  // The backbone is frozen and identically initialized for every lr, so MEFT
  // side inputs are computed once.
  std::vector<SideInput> train_side, eval_side;
  if (method.is_meft()) {
    train_side = prepare_all(model, data.train, spec);
    eval_side = prepare_all(model, data.eval, spec);
  }

  const std::size_t n_train = data.train.size();
  const std::size_t steps_per_epoch = (n_train + spec.batch_size - 1) / spec.batch_size;
  const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(spec.epochs);
  double best_acc = -1.0;
  double total_ms = 0.0;
  std::size_t timed_steps = 0;

  // Ascending lr so that ties resolve toward the smaller rate.
  std::vector<double> grid = spec.lr_grid;
  std::sort(grid.begin(), grid.end());
  for (double lr : grid) {
    model.params().materialize(spec.seed);
    Engine engine(spec.precision);
    engine.set_parallel_kernels(!spec.deterministic);
    Adam adam(model.params(), {lr}, spec.precision);
    std::unique_ptr<AdaLoraController> ada;
    if (method.kind == MethodKind::AdaLora) {
      ada = std::make_unique<AdaLoraController>(model.adalora_prefixes(), method.init_r, total_steps);
    }

    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(spec.seed ^ 0x5bd1e995ULL);
    std::size_t step = 0;
    double run_best = 0.0;
    double last_loss = 0.0;
    double run_ms = 0.0;
    for (int epoch = 0; epoch < spec.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t start = 0; start < n_train; start += spec.batch_size) {
        const auto t0 = std::chrono::steady_clock::now();
        const std::size_t end = std::min(n_train, start + spec.batch_size);
        const double inv_b = 1.0 / static_cast<double>(end - start);
        double batch_loss = 0.0;
        for (std::size_t j = start; j < end; ++j) {
          const std::size_t idx = order[j];
          const StepMeasure m = train_sample(engine, model, data.train.items[idx],
                                             method.is_meft() ? &train_side[idx] : nullptr, inv_b);
          if (!std::isfinite(m.loss)) {
            throw std::runtime_error("non-finite loss for method " + method.label() + " at lr " + lr_text(lr));
          }
          batch_loss += m.loss * inv_b;
          report.peak_retained_bytes = std::max(report.peak_retained_bytes, m.peak_retained_bytes);
          report.backward_flops = std::max(report.backward_flops, m.backward_flops);
          report.backbone_nodes_visited = std::max(report.backbone_nodes_visited, m.backbone_nodes);
          report.backbone_layers_visited.insert(m.backbone_layers.begin(), m.backbone_layers.end());
        }
        ++step;
        if (ada) {
          engine.backward(ada->orthogonality_penalty(engine, model.params()));
          ada->update_importance(model.params());
        }
        adam.step(model.params(), step);
        if (ada) ada->apply_mask(model.params(), step);
        last_loss = batch_loss;
        run_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      }

      std::size_t correct = 0;
      {
        Engine::DetachedScope scope(engine);
        for (std::size_t i = 0; i < data.eval.size(); ++i) {
          const Tensor logits = method.is_meft() ? model.logits_from(engine, eval_side[i])
                                                 : model.logits(engine, data.eval.items[i].x);
          if (argmax(logits) == data.eval.items[i].label) ++correct;
        }
      }
      run_best = std::max(run_best, 100.0 * static_cast<double>(correct) / static_cast<double>(data.eval.size()));
    }
    total_ms += run_ms;
    timed_steps += step;
    report.grid.push_back({lr, run_best, last_loss});
    if (run_best > best_acc) {
      best_acc = run_best;
      report.accuracy_pct = run_best;
      report.lr = lr;
    }
  }
  report.step_ms = timed_steps ? total_ms / static_cast<double>(timed_steps) : 0.0;
  const std::size_t trainable = report.trainable_params;
  report.est_footprint_bytes = elem * (report.total_params + trainable + 2 * trainable) +
                               report.peak_retained_bytes * spec.batch_size;
  return report;
}

}  // namespace meftlab
