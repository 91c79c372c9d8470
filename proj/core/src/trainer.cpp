#include "dit/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "dit/diffusion.hpp"
#include "dit/errors.hpp"
#include "dit/model.hpp"

namespace dit {

namespace {

constexpr const char* kCheckpointFormat = "dit-checkpoint";
constexpr int kCheckpointVersion = 1;

// Sub-streams of one training step.
enum : std::uint64_t { kDrawBatch = 0, kDrawNoise = 1, kDrawLabels = 2 };

KeyedRng step_rng(const TrainConfig& c, std::int64_t step, std::uint64_t sub) {
  return KeyedRng({c.seed, static_cast<std::uint64_t>(Stream::kTrainStep), static_cast<std::uint64_t>(step), sub});
}

void require_same_layout(const ParameterStore<float>& a, const ParameterStore<float>& b, const char* what) {
  if (a.size() != b.size()) throw ShapeError(std::string(what) + ": parameter count mismatch");
  auto it = b.begin();
  for (const auto& [name, t] : a) {
    if (it->first != name || it->second.shape() != t.shape()) {
      throw ShapeError(std::string(what) + ": layout mismatch at '" + name + "'");
    }
    ++it;
  }
}

ParameterStore<float> zeros_like(const ParameterStore<float>& params) {
  ParameterStore<float> out;
  for (const auto& [name, t] : params) out.add(name, Tensor<float>(t.shape()));
  return out;
}

void put_store(TensorArchive& ar, const std::string& prefix, const ParameterStore<float>& store) {
  for (const auto& [name, t] : store) ar.put(prefix + name, t);
}

ParameterStore<float> get_store(const TensorArchive& ar, const std::string& prefix, const ParameterStore<float>& layout) {
  ParameterStore<float> out;
  for (const auto& [name, t] : layout) {
    auto loaded = ar.get<float>(prefix + name);
    if (loaded.shape() != t.shape()) throw FormatError("checkpoint tensor '" + prefix + name + "' has wrong shape");
    out.add(name, loaded);
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("EMA decay must lie in [0, 1)");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("Adam epsilon must be > 0");
  if (!(vlb_weight >= 0.0)) throw ConfigError("VLB weight must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("checkpoint interval must be >= 0");
  if (keep_checkpoints < 1) throw ConfigError("keep_checkpoints must be >= 1");
  if (diffusion_steps < 1) throw ConfigError("diffusion steps must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate},
                     {"weight_decay", c.weight_decay},
                     {"batch_size", c.batch_size},
                     {"steps", c.steps},
                     {"ema_decay", c.ema_decay},
                     {"seed", c.seed},
                     {"data_seed", c.data_seed},
                     {"adam_beta1", c.adam_beta1},
                     {"adam_beta2", c.adam_beta2},
                     {"adam_eps", c.adam_eps},
                     {"vlb_weight", c.vlb_weight},
                     {"checkpoint_every", c.checkpoint_every},
                     {"keep_checkpoints", c.keep_checkpoints},
                     {"diffusion_steps", c.diffusion_steps},
                     {"beta_start", c.beta_start},
                     {"beta_end", c.beta_end}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig d;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("learning_rate", d.learning_rate);
  get("weight_decay", d.weight_decay);
  get("batch_size", d.batch_size);
  get("steps", d.steps);
  get("ema_decay", d.ema_decay);
  get("seed", d.seed);
  get("data_seed", d.data_seed);
  get("adam_beta1", d.adam_beta1);
  get("adam_beta2", d.adam_beta2);
  get("adam_eps", d.adam_eps);
  get("vlb_weight", d.vlb_weight);
  get("checkpoint_every", d.checkpoint_every);
  get("keep_checkpoints", d.keep_checkpoints);
  get("diffusion_steps", d.diffusion_steps);
  get("beta_start", d.beta_start);
  get("beta_end", d.beta_end);
  c = d;
}

AdamMoments AdamMoments::zeros_like(const ParameterStore<float>& params) {
  return {dit::zeros_like(params), dit::zeros_like(params)};
}

void adamw_step(ParameterStore<float>& params, AdamMoments& moments, const TrainConfig& config, std::int64_t step) {
  if (step < 1) throw ContractError("AdamW step counter is 1-based");
  require_same_layout(params, moments.m, "adamw_step");
  require_same_layout(params, moments.v, "adamw_step");
  const double b1 = config.adam_beta1, b2 = config.adam_beta2, lr = config.learning_rate;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
  const double decay = 1.0 - lr * config.weight_decay;
  auto m_it = moments.m.begin();
  auto v_it = moments.v.begin();
  for (auto& [name, p] : params) {
    auto pd = p.data();
    auto md = m_it->second.data();
    auto vd = v_it->second.data();
    ++m_it;
    ++v_it;
    const bool has = p.has_grad();
    std::span<const float> g = has ? p.grad() : std::span<const float>();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      const double gi = has ? g[i] : 0.0;
      const double m = b1 * md[i] + (1.0 - b1) * gi;
      const double v = b2 * vd[i] + (1.0 - b2) * gi * gi;
      md[i] = static_cast<float>(m);
      vd[i] = static_cast<float>(v);
      const double update = lr * (m / c1) / (std::sqrt(v / c2) + config.adam_eps);
      pd[i] = static_cast<float>(decay * pd[i] - update);
    }
  }
}

void ema_update(ParameterStore<float>& ema, const ParameterStore<float>& params, double decay) {
  if (!(decay >= 0.0 && decay <= 1.0)) throw ContractError("EMA decay must lie in [0, 1]");
  require_same_layout(ema, params, "ema_update");
  auto it = params.begin();
  for (auto& [name, e] : ema) {
    auto ed = e.data();
    auto pd = it->second.data();
    ++it;
    if (decay == 0.0) {
      std::copy(pd.begin(), pd.end(), ed.begin());
      continue;
    }
    for (std::size_t i = 0; i < ed.size(); ++i) {
      ed[i] = static_cast<float>(ed[i] + (1.0 - decay) * (static_cast<double>(pd[i]) - ed[i]));
    }
  }
}

TrainState TrainState::fresh(const DiTConfig& model, const TrainConfig& train) {
  model.validate();
  train.validate();
  TrainState s;
  s.model = model;
  s.train = train;
  s.params = init_parameters<float>(model, train.seed);
  s.ema = s.params.clone();
  s.moments = AdamMoments::zeros_like(s.params);
  return s;
}

TensorArchive checkpoint_archive(const TrainState& state) {
  TensorArchive ar;
  nlohmann::json meta{{"format", kCheckpointFormat},
                      {"version", kCheckpointVersion},
                      {"model", state.model},
                      {"train", state.train},
                      {"step", state.step}};
  ar.metadata = meta.dump();
  put_store(ar, "params/", state.params);
  put_store(ar, "ema/", state.ema);
  put_store(ar, "adam_m/", state.moments.m);
  put_store(ar, "adam_v/", state.moments.v);
  return ar;
}

TrainState restore_checkpoint(const TensorArchive& archive) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(archive.metadata);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata is not JSON: ") + e.what());
  }
  if (meta.value("format", "") != kCheckpointFormat) throw FormatError("archive is not a checkpoint");
  if (meta.value("version", 0) != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  TrainState s;
  s.model = meta.at("model").get<DiTConfig>();
  s.train = meta.at("train").get<TrainConfig>();
  s.step = meta.at("step").get<std::int64_t>();
  // Layout comes from the config; values from the archive.
  const auto layout = init_parameters<float>(s.model, 0);
  s.params = get_store(archive, "params/", layout);
  s.ema = get_store(archive, "ema/", layout);
  s.moments.m = get_store(archive, "adam_m/", layout);
  s.moments.v = get_store(archive, "adam_v/", layout);
  return s;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  checkpoint_archive(state).save(path);
}

TrainState load_checkpoint(const std::filesystem::path& path) { return restore_checkpoint(TensorArchive::load(path)); }

StepDraws step_draws(const TrainConfig& config, std::int64_t step) {
  auto rng = step_rng(config, step, kDrawBatch);
  StepDraws d;
  const auto b = static_cast<std::size_t>(config.batch_size);
  d.indices.reserve(b);
  for (std::size_t i = 0; i < b; ++i) d.indices.push_back(rng.next_u64());
  for (std::size_t i = 0; i < b; ++i) d.flips.push_back(rng.bernoulli(0.5));
  for (std::size_t i = 0; i < b; ++i) d.timesteps.push_back(static_cast<int>(rng.uniform_int(1, config.diffusion_steps)));
  return d;
}

Trainer::Trainer(TrainState state, ToyDataset dataset)
    : state_(std::move(state)), dataset_(std::move(dataset)), schedule_(state_.train.schedule()) {
  state_.model.validate();
  state_.train.validate();
  if (dataset_.num_classes() != state_.model.num_classes || dataset_.input_size() != state_.model.input_size ||
      dataset_.channels() != state_.model.channels) {
    throw ConfigError("dataset does not match the model configuration");
  }
  state_.params.set_requires_grad(true);
}

StepLog Trainer::step() {
  const auto start = std::chrono::steady_clock::now();
  const auto& tc = state_.train;
  const std::int64_t k = state_.step + 1;
  const auto draws = step_draws(tc, k);

  std::vector<std::int64_t> labels;
  auto x0 = dataset_.batch(draws.indices, labels);
  {
    const auto flipped = flip_columns(x0);
    const std::size_t per = dataset_.item_size();
    auto dst = x0.data();
    auto src = flipped.data();
    for (std::size_t i = 0; i < draws.flips.size(); ++i) {
      if (draws.flips[i]) std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(i * per), per, dst.begin() + static_cast<std::ptrdiff_t>(i * per));
    }
  }
  auto noise_rng = step_rng(tc, k, kDrawNoise);
  const auto eps = Tensor<float>::randn(x0.shape(), noise_rng);
  auto label_rng = step_rng(tc, k, kDrawLabels);
  const auto dropped = drop_labels(labels, state_.model.class_dropout_prob, label_rng);

  std::vector<double> t_model;
  t_model.reserve(draws.timesteps.size());
  for (int t : draws.timesteps) t_model.push_back(schedule_.timestep(t));

  StepLog log;
  log.step = k;
  double total = 0.0;
  try {
    const auto xt = q_sample(schedule_, x0, draws.timesteps, eps);
    state_.params.zero_grad();
    auto out = forward(state_.model, state_.params, xt, t_model, dropped);
    auto loss = hybrid_loss(schedule_, out.eps, out.v, eps, x0, xt, draws.timesteps, tc.vlb_weight);
    total = loss.total.item();
    log.l_simple = loss.mse;
    log.l_vlb = loss.vlb;
    if (!std::isfinite(total)) throw NumericError("loss is " + std::to_string(total));
    loss.total.backward();
  } catch (const NumericError& e) {
    std::string where;
    if (diagnostics_dir_) {
      std::filesystem::create_directories(*diagnostics_dir_);
      const auto path = *diagnostics_dir_ / ("diagnostic_step" + std::to_string(k) + ".ditt");
      save_checkpoint(path, state_);
      where = "; state before the step saved to " + path.string();
    }
    throw NumericError("non-finite training loss at step " + std::to_string(k) + " (" + e.what() + ")" + where);
  }

  adamw_step(state_.params, state_.moments, tc, k);
  ema_update(state_.ema, state_.params, tc.ema_decay);
  state_.params.zero_grad();
  state_.step = k;
  log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return log;
}

ToyDataset make_dataset(const DiTConfig& model, const TrainConfig& train) {
  return ToyDataset(model.num_classes, model.input_size, model.channels, train.data_seed);
}

std::string checkpoint_filename(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%08lld.ditt", static_cast<long long>(step));
  return buf;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<StepLog>& log, bool append) {
  const bool header = !append || !std::filesystem::exists(path);
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  if (header) out << "step,l_simple,l_vlb,wall_clock\n";
  char buf[128];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.6f\n", static_cast<long long>(r.step), r.l_simple, r.l_vlb,
                  r.wall_seconds);
    out << buf;
  }
}

TrainResult train(TrainState state, const ToyDataset& dataset, const TrainRunOptions& options) {
  const std::int64_t target = options.stop_at.value_or(state.train.steps);
  const std::int64_t every = state.train.checkpoint_every;
  const auto keep = static_cast<std::size_t>(state.train.keep_checkpoints);
  const bool to_disk = !options.out_dir.empty();
  Trainer trainer(std::move(state), dataset);
  TrainResult result;
  if (to_disk) {
    std::filesystem::create_directories(options.out_dir);
    trainer.set_diagnostics_dir(options.out_dir);
  }
  const auto csv = options.out_dir / "loss.csv";
  const bool resumed = trainer.state().step > 0;
  if (to_disk && !resumed) write_loss_csv(csv, {}, false);

  std::vector<StepLog> pending;
  auto flush = [&] {
    if (to_disk && !pending.empty()) write_loss_csv(csv, pending, true);
    pending.clear();
  };
  while (trainer.state().step < target) {
    auto log = trainer.step();
    result.log.push_back(log);
    pending.push_back(log);
    if (options.on_step) options.on_step(log);
    const auto k = trainer.state().step;
    if (to_disk && ((every > 0 && k % every == 0) || k == target)) {
      flush();
      const auto path = options.out_dir / checkpoint_filename(k);
      save_checkpoint(path, trainer.state());
      if (result.checkpoints.empty() || result.checkpoints.back() != path) result.checkpoints.push_back(path);
      while (result.checkpoints.size() > keep) {
        std::filesystem::remove(result.checkpoints.front());
        result.checkpoints.erase(result.checkpoints.begin());
      }
    }
  }
  flush();
  result.state = std::move(trainer.state());
  return result;
}

TrainResult train(const DiTConfig& model, const TrainConfig& train_config, const TrainRunOptions& options) {
  return train(TrainState::fresh(model, train_config), make_dataset(model, train_config), options);
}

}  // namespace dit
