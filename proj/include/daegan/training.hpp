#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "daegan/checkpoint.hpp"
#include "daegan/config.hpp"
#include "daegan/embedders.hpp"
#include "daegan/gan.hpp"
#include "daegan/optim.hpp"
#include "daegan/synthdata.hpp"

namespace daegan {

/// FNV-1a over the raw payload bytes of every parameter and buffer, in
/// registration order. Equal hashes across two points in time mean the
/// network was left bitwise untouched.
template <typename T>
uint64_t registry_hash(const ParamRegistry<T>& reg) {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const Tensor<T>& t) {
    const auto* p = reinterpret_cast<const unsigned char*>(t.data());
    const size_t bytes = size_t(t.numel()) * sizeof(T);
    for (size_t i = 0; i < bytes; ++i) h = (h ^ p[i]) * 1099511628211ull;
  };
  for (const auto& [name, t] : reg.params) mix(t);
  for (const auto& [name, t] : reg.buffers) mix(t);
  return h;
}

/// The four networks, initialized from a single seed-derived stream in a
/// fixed order so the whole model state is a pure function of the seed.
template <typename T>
struct Models {
  FaceEmbedder<T> F;
  PoseEmbedder<T> P;
  Generator<T> G;
  Discriminator<T> D;

  explicit Models(const TrainConfig& cfg) {
    Rng rng(cfg.seed);
    const ArchConfig arch = cfg.arch();
    F = FaceEmbedder<T>(arch, rng);
    P = PoseEmbedder<T>(arch, rng);
    G = Generator<T>(arch, rng);
    D = Discriminator<T>(arch, rng);
  }

  ParamRegistry<T>& reg_of(char net) {
    switch (net) {
      case 'F': return F.reg();
      case 'P': return P.reg();
      case 'G': return G.reg();
      case 'D': return D.reg();
      default: raise("models: unknown network label '", net, "'");
    }
  }
};

/// One optimizer invocation inside a training step: which network stepped,
/// at what learning rate, and (when tracking is enabled) which networks'
/// bytes actually changed.
struct SubStepMeta {
  uint32_t stage = 0;
  int64_t epoch = 0;  // 0-based index of the epoch being trained
  int64_t step = 0;   // batch index within the epoch
  char network = '?';
  double lr = 0.0;
  std::string changed;  // subset of "FPGD"
};

/// Two-stage trainer. Stage 1 fits F and P jointly on the reconstruction
/// objective; stage 2 alternates per-network sub-steps (each with its own
/// graph and only that network trainable) so the GAN pair joins in.
template <typename T>
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, DatasetIndex index, std::string run_dir)
      : cfg_(cfg),
        index_(std::move(index)),
        run_dir_(std::move(run_dir)),
        models_(cfg),
        data_rng_(cfg.seed ^ 0x9e3779b97f4a7c15ull) {
    validate_config(cfg_);
    for (AdamState<T>* st : {&adam_F_, &adam_P_, &adam_G_, &adam_D_}) {
      st->beta1 = T(cfg_.beta1);
      st->beta2 = T(cfg_.beta2);
    }
    int64_t eligible = 0;
    for (const auto& v : index_.videos)
      if (int64_t(v.frames.size()) - cfg_.holdout >= cfg_.k + 1) ++eligible;
    check(eligible > 0, "train: no video has k+1 = ", cfg_.k + 1,
          " usable frames once the last ", cfg_.holdout,
          " are held out; shrink k or holdout, or add frames");
    std::filesystem::create_directories(run_dir_);
  }

  Models<T>& models() { return models_; }
  const TrainConfig& config() const { return cfg_; }
  const DatasetIndex& dataset() const { return index_; }
  uint32_t stage() const { return stage_; }
  int64_t epoch() const { return epoch_; }
  std::string metric_log_path() const { return run_dir_ + "/metrics.tsv"; }

  /// Steps per epoch: explicit when configured, otherwise an epoch's worth of
  /// stochastic batches (usable driving frames / batch_size; reference frames
  /// are conditioning inputs, not consumed data).
  int64_t steps_per_epoch() const {
    if (cfg_.steps_per_epoch > 0) return cfg_.steps_per_epoch;
    int64_t usable = 0;
    for (const auto& v : index_.videos)
      usable += std::max<int64_t>(0, int64_t(v.frames.size()) - cfg_.holdout);
    return std::max<int64_t>(1, usable / cfg_.batch_size);
  }

  /// Optional sub-step trace sink; with track_changes the trainer hashes all
  /// four networks around every optimizer call to report what moved.
  void set_trace(std::vector<SubStepMeta>* sink, bool track_changes) {
    trace_ = sink;
    track_changes_ = track_changes;
  }

  void run_stage1() {
    check(stage_ <= 1, "stage 1 requested but the run is already at stage ",
          stage_);
    stage_ = 1;
    const int64_t spe = steps_per_epoch();
    bool wrote = false;
    while (epoch_ < cfg_.epochs_stage1) {
      const auto t0 = std::chrono::steady_clock::now();
      const double lr = lr_at(epoch_, cfg_.epochs_stage1, cfg_.lr_base);
      EpochAccum acc;
      for (step_ = 0; step_ < spe; ++step_) acc.add(stage1_step(lr));
      ++epoch_;
      append_metric_line(acc, wall_since(t0));
      save_epoch_checkpoint();
      wrote = true;
    }
    if (!wrote) save_epoch_checkpoint();
  }

  void run_stage2() {
    if (stage_ < 2) {
      stage_ = 2;
      epoch_ = 0;
    }
    const int64_t spe = steps_per_epoch();
    bool wrote = false;
    while (epoch_ < cfg_.epochs_stage2) {
      const auto t0 = std::chrono::steady_clock::now();
      const double lr_emb =
          lr_at(epoch_, cfg_.epochs_stage2,
                cfg_.lr_base / cfg_.embedder_lr_decay_factor);
      const double lr_g = lr_at(epoch_, cfg_.epochs_stage2, cfg_.lr_base);
      const double lr_d =
          lr_at(epoch_, cfg_.epochs_stage2, cfg_.lr_discriminator);
      EpochAccum acc;
      for (step_ = 0; step_ < spe; ++step_)
        acc.add(stage2_step(lr_emb, lr_g, lr_d));
      ++epoch_;
      append_metric_line(acc, wall_since(t0));
      save_epoch_checkpoint();
      wrote = true;
    }
    if (!wrote) save_epoch_checkpoint();
  }

  void run_auto() {
    run_stage1();
    run_stage2();
  }

  /// Mean L_R over every held-out frame, through the generator, touching no
  /// gradients or RNG state. Reference frames are the first k training
  /// frames of each video.
  double holdout_l_r() {
    check(cfg_.holdout > 0, "holdout_l_r: holdout is 0, nothing is held out");
    typename Graph<T>::NoRecord nr;
    double sum = 0.0;
    int64_t n = 0;
    for (const auto& video : index_.videos) {
      const int64_t total = int64_t(video.frames.size());
      const int64_t usable = total - cfg_.holdout;
      if (usable < cfg_.k) continue;
      const int64_t res = cfg_.resolution;
      std::vector<Tensor<T>> refs;
      for (int64_t j = 0; j < cfg_.k; ++j)
        refs.push_back(
            reshape(read_image<T>(video.frames[size_t(j)]), {1, 3, res, res}));
      const Tensor<T> f_hat = models_.F.embed(refs).f_hat;
      const int64_t H = cfg_.holdout;
      Tensor<T> driving = Tensor<T>::uninit({H, 3, f_hat.dim(2), f_hat.dim(3)});
      for (int64_t j = 0; j < H; ++j) {
        Tensor<T> img = read_image<T>(video.frames[size_t(usable + j)]);
        std::copy(img.data(), img.data() + img.numel(),
                  driving.mutable_data() + j * img.numel());
      }
      const Tensor<T> p_hat = models_.P.encode(driving);
      const Tensor<T> x_tilde = models_.G(tile_batch(f_hat, H), p_hat);
      sum += double(reconstruction_loss(driving, x_tilde).item()) * double(H);
      n += H;
    }
    check(n > 0, "holdout_l_r: no video is long enough to evaluate");
    return sum / double(n);
  }

  /// Full state snapshot: parameters, buffers, Adam moments, config and the
  /// data-sampling RNG, sufficient to resume bit-identically.
  Checkpoint<T> snapshot() {
    Checkpoint<T> ck;
    ck.stage = stage_;
    ck.epoch = uint64_t(epoch_);
    for (char net : {'F', 'P', 'G', 'D'}) {
      ParamRegistry<T>& reg = models_.reg_of(net);
      for (auto& [name, t] : reg.params) ck.records.emplace_back(name, t);
      for (auto& [name, t] : reg.buffers) ck.records.emplace_back(name, t);
    }
    for (char net : {'F', 'P', 'G', 'D'}) {
      const AdamState<T>& st = adam_of(net);
      if (st.m.empty()) continue;
      ParamRegistry<T>& reg = models_.reg_of(net);
      for (size_t p = 0; p < reg.params.size(); ++p) {
        const std::string& pname = reg.params[p].first;
        ck.records.emplace_back(
            "adam.m." + pname,
            Tensor<T>::from({int64_t(st.m[p].size())}, st.m[p]));
        ck.records.emplace_back(
            "adam.v." + pname,
            Tensor<T>::from({int64_t(st.v[p].size())}, st.v[p]));
      }
      ck.records.emplace_back("adam.t." + std::string(1, net),
                              Tensor<T>::from({1}, {T(st.t)}));
    }
    ck.config_text = serialize_config(cfg_);
    ck.rng_state = data_rng_.state_bytes();
    return ck;
  }

  /// Restores a snapshot into this trainer. The checkpoint's architecture
  /// must match; every record must be consumed, every expected record must
  /// be present, so silent drift is impossible.
  void restore(const Checkpoint<T>& ck) {
    TrainConfig ck_cfg;
    apply_config_text(ck_cfg, ck.config_text);
    check_arch_compatible(cfg_, ck_cfg);
    check(ck.stage >= 1 && ck.stage <= 2, "restore: checkpoint stage ",
          ck.stage, " is not 1 or 2");
    std::vector<bool> used(ck.records.size(), false);
    auto take = [&](const std::string& name) -> const Tensor<T>* {
      for (size_t i = 0; i < ck.records.size(); ++i)
        if (ck.records[i].first == name) {
          used[i] = true;
          return &ck.records[i].second;
        }
      return nullptr;
    };
    for (char net : {'F', 'P', 'G', 'D'}) {
      ParamRegistry<T>& reg = models_.reg_of(net);
      auto copy_into = [&](const std::string& name, Tensor<T>& t) {
        const Tensor<T>* rec = take(name);
        check(rec != nullptr, "restore: checkpoint is missing record '", name,
              "'");
        check(rec->shape() == t.shape(), "restore: record '", name,
              "' has shape ", shape_str(rec->shape()), ", model expects ",
              shape_str(t.shape()));
        std::copy(rec->data(), rec->data() + rec->numel(), t.mutable_data());
      };
      for (auto& [name, t] : reg.params) copy_into(name, t);
      for (auto& [name, t] : reg.buffers) copy_into(name, t);
    }
    for (char net : {'F', 'P', 'G', 'D'}) {
      AdamState<T>& st = adam_of(net);
      const Tensor<T>* t_rec = take("adam.t." + std::string(1, net));
      if (t_rec == nullptr) {
        st.m.clear();
        st.v.clear();
        st.t = 0;
        continue;
      }
      st.t = int64_t(t_rec->item());
      ParamRegistry<T>& reg = models_.reg_of(net);
      st.m.assign(reg.params.size(), {});
      st.v.assign(reg.params.size(), {});
      for (size_t p = 0; p < reg.params.size(); ++p) {
        const std::string& pname = reg.params[p].first;
        const int64_t numel = reg.params[p].second.numel();
        for (auto [prefix, dst] :
             {std::pair{"adam.m.", &st.m[p]}, std::pair{"adam.v.", &st.v[p]}}) {
          const Tensor<T>* rec = take(prefix + pname);
          check(rec != nullptr, "restore: checkpoint is missing record '",
                prefix, pname, "'");
          check(rec->numel() == numel, "restore: record '", prefix, pname,
                "' holds ", rec->numel(), " values, parameter has ", numel);
          dst->assign(rec->data(), rec->data() + rec->numel());
        }
      }
    }
    for (size_t i = 0; i < ck.records.size(); ++i)
      check(used[i], "restore: checkpoint record '", ck.records[i].first,
            "' matches nothing in this model");
    data_rng_.set_state_bytes(ck.rng_state);
    stage_ = ck.stage;
    epoch_ = int64_t(ck.epoch);
  }

  void save_epoch_checkpoint() {
    char name[48];
    std::snprintf(name, sizeof name, "ckpt-s%u-e%04lld.bin", stage_,
                  (long long)epoch_);
    Checkpoint<T> ck = snapshot();
    save_checkpoint(ck, run_dir_ + "/" + name);
    last_checkpoint_path_ = run_dir_ + "/" + name;
  }

  const std::string& last_checkpoint_path() const {
    return last_checkpoint_path_;
  }

 private:
  struct StepMetrics {
    double l_rec = 0, l_s = 0, l_g = 0, l_d = 0, l_fm = 0;
  };
  struct EpochAccum {
    StepMetrics sum;
    int64_t n = 0;
    void add(const StepMetrics& m) {
      sum.l_rec += m.l_rec;
      sum.l_s += m.l_s;
      sum.l_g += m.l_g;
      sum.l_d += m.l_d;
      sum.l_fm += m.l_fm;
      ++n;
    }
    StepMetrics mean() const {
      StepMetrics m = sum;
      const double d = n > 0 ? double(n) : 1.0;
      m.l_rec /= d;
      m.l_s /= d;
      m.l_g /= d;
      m.l_d /= d;
      m.l_fm /= d;
      return m;
    }
  };

  AdamState<T>& adam_of(char net) {
    switch (net) {
      case 'F': return adam_F_;
      case 'P': return adam_P_;
      case 'G': return adam_G_;
      case 'D': return adam_D_;
      default: raise("trainer: unknown network label '", net, "'");
    }
  }

  static double wall_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  }

  static Tensor<T> tile_batch(const Tensor<T>& x, int64_t B) {
    Shape s = x.shape();
    check(s[0] == 1, "tile_batch: expected batch 1, got ", shape_str(s));
    s[0] = B;
    Tensor<T> out = Tensor<T>::uninit(std::move(s));
    for (int64_t b = 0; b < B; ++b)
      std::copy(x.data(), x.data() + x.numel(),
                out.mutable_data() + b * x.numel());
    return out;
  }

  std::array<uint64_t, 4> hash_all() {
    return {registry_hash(models_.F.reg()), registry_hash(models_.P.reg()),
            registry_hash(models_.G.reg()), registry_hash(models_.D.reg())};
  }

  template <typename Body>
  void traced_substep(char net, double lr, Body&& body) {
    std::array<uint64_t, 4> before{};
    if (trace_ != nullptr && track_changes_) before = hash_all();
    body();
    if (trace_ == nullptr) return;
    SubStepMeta m;
    m.stage = stage_;
    m.epoch = epoch_;
    m.step = step_;
    m.network = net;
    m.lr = lr;
    if (track_changes_) {
      const std::array<uint64_t, 4> after = hash_all();
      const char* labels = "FPGD";
      for (int i = 0; i < 4; ++i)
        if (after[size_t(i)] != before[size_t(i)]) m.changed += labels[i];
    }
    trace_->push_back(m);
  }

  void only_trainable(char net) {
    models_.F.reg().set_trainable(net == 'F');
    models_.P.reg().set_trainable(net == 'P');
    models_.G.reg().set_trainable(net == 'G');
    models_.D.reg().set_trainable(net == 'D');
  }

  void all_trainable() {
    for (char net : {'F', 'P', 'G', 'D'})
      models_.reg_of(net).set_trainable(true);
  }

  StepMetrics stage1_step(double lr) {
    Batch<T> b =
        load_batch<T>(index_, cfg_.k, cfg_.batch_size, data_rng_, cfg_.holdout);
    EmbedderLoss<T> loss;
    {
      typename Graph<T>::Recording rec;
      loss = embedder_objective(models_.F, models_.P, b.references, b.driving,
                                T(cfg_.lambda_s));
      Graph<T>::active().backward(loss.total);
    }
    traced_substep('F', lr, [&] {
      adam_step(models_.F.reg().params, adam_F_, T(lr));
    });
    traced_substep('P', lr, [&] {
      adam_step(models_.P.reg().params, adam_P_, T(lr));
    });
    StepMetrics m;
    m.l_rec = double(loss.l_rec.item());
    m.l_s = double(loss.l_s.item());
    return m;
  }

  StepMetrics stage2_step(double lr_emb, double lr_g, double lr_d) {
    Batch<T> b =
        load_batch<T>(index_, cfg_.k, cfg_.batch_size, data_rng_, cfg_.holdout);
    StepMetrics m;
    for (char net : cfg_.alt_order) {
      switch (net) {
        case 'F':
        case 'P': substep_embedder(b, net, lr_emb, m); break;
        case 'G': substep_generator(b, lr_g, m); break;
        case 'D': substep_discriminator(b, lr_d, m); break;
        default: raise("trainer: bad alt_order character '", net, "'");
      }
    }
    return m;
  }

  /// Stage-2 embedder sub-step: the stage-1 objective plus lambda_r times
  /// the reconstruction through the (frozen) generator.
  void substep_embedder(const Batch<T>& b, char net, double lr,
                        StepMetrics& m) {
    traced_substep(net, lr, [&] {
      only_trainable(net);
      Tensor<T> l_rec, l_s;
      {
        typename Graph<T>::Recording rec;
        typename FaceEmbedder<T>::Output fo = models_.F.embed(b.references);
        typename PoseEmbedder<T>::Output po = models_.P(b.driving, fo.f_hat);
        l_rec = reconstruction_loss(b.driving, po.x_hat);
        std::vector<Tensor<T>> fields = fo.fields;
        fields.push_back(po.t_inv);
        l_s = tv_smoothness(fields);
        Tensor<T> total =
            cfg_.lambda_s == 0
                ? l_rec
                : add(l_rec, mul_scalar(l_s, T(cfg_.lambda_s)));
        if (cfg_.lambda_r != 0) {
          Tensor<T> x_tilde = models_.G(fo.f_hat, po.pose_code);
          Tensor<T> l_r = reconstruction_loss(b.driving, x_tilde);
          total = add(total, mul_scalar(l_r, T(cfg_.lambda_r)));
        }
        Graph<T>::active().backward(total);
      }
      adam_step(models_.reg_of(net).params, adam_of(net), T(lr));
      all_trainable();
      m.l_rec = double(l_rec.item());
      m.l_s = double(l_s.item());
    });
  }

  void substep_generator(const Batch<T>& b, double lr, StepMetrics& m) {
    traced_substep('G', lr, [&] {
      only_trainable('G');
      Stage2Loss<T> sl;
      {
        typename Graph<T>::Recording rec;
        Tensor<T> f_hat = models_.F.embed(b.references).f_hat;
        Tensor<T> p_hat = models_.P.encode(b.driving);
        sl = stage2_objective(models_.G, models_.D, f_hat, p_hat, b.driving,
                              T(cfg_.lambda_r), T(cfg_.lambda_fm));
        Graph<T>::active().backward(sl.l_g_total);
      }
      adam_step(models_.G.reg().params, adam_G_, T(lr));
      all_trainable();
      m.l_g = double(sl.l_g_total.item());
      m.l_fm = double(sl.l_fm.item());
    });
  }

  /// The only place spectral-norm power iterations advance: D's own update.
  void substep_discriminator(const Batch<T>& b, double lr, StepMetrics& m) {
    traced_substep('D', lr, [&] {
      only_trainable('D');
      Tensor<T> x_tilde;
      {
        typename Graph<T>::NoRecord nr;
        Tensor<T> f_hat = models_.F.embed(b.references).f_hat;
        Tensor<T> p_hat = models_.P.encode(b.driving);
        x_tilde = models_.G(f_hat, p_hat);
      }
      Tensor<T> l_d;
      models_.D.set_sn_update(true);
      {
        typename Graph<T>::Recording rec;
        typename Discriminator<T>::Output real = models_.D(b.driving);
        typename Discriminator<T>::Output fake = models_.D(x_tilde);
        l_d = hinge_d_loss(real.scores, fake.scores);
        Graph<T>::active().backward(l_d);
      }
      models_.D.set_sn_update(false);
      adam_step(models_.D.reg().params, adam_D_, T(lr));
      all_trainable();
      m.l_d = double(l_d.item());
    });
  }

  void append_metric_line(const EpochAccum& acc, double wall) {
    const StepMetrics m = acc.mean();
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "%lld\t%u\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\n",
                  (long long)epoch_, stage_, m.l_rec, m.l_s, m.l_g, m.l_d,
                  m.l_fm, wall);
    std::ofstream log(metric_log_path(), std::ios::binary | std::ios::app);
    check(log.good(), "train: cannot open metric log ", metric_log_path());
    log << buf;
  }

  TrainConfig cfg_;
  DatasetIndex index_;
  std::string run_dir_;
  Models<T> models_;
  Rng data_rng_;
  AdamState<T> adam_F_, adam_P_, adam_G_, adam_D_;
  uint32_t stage_ = 0;
  int64_t epoch_ = 0;
  int64_t step_ = 0;
  std::vector<SubStepMeta>* trace_ = nullptr;
  bool track_changes_ = false;
  std::string last_checkpoint_path_;
};

/// Loads network parameters and buffers from a checkpoint into freshly
/// built models, ignoring optimizer and RNG records. For inference paths
/// that have no trainer and no dataset.
template <typename T>
void restore_models(Models<T>& models, const Checkpoint<T>& ck) {
  for (char net : {'F', 'P', 'G', 'D'}) {
    ParamRegistry<T>& reg = models.reg_of(net);
    auto copy_into = [&](const std::string& name, Tensor<T>& t) {
      const Tensor<T>* rec = ck.find(name);
      check(rec != nullptr, "restore_models: checkpoint is missing record '",
            name, "'");
      check(rec->shape() == t.shape(), "restore_models: record '", name,
            "' has shape ", shape_str(rec->shape()), ", model expects ",
            shape_str(t.shape()));
      std::copy(rec->data(), rec->data() + rec->numel(), t.mutable_data());
    };
    for (auto& [name, t] : reg.params) copy_into(name, t);
    for (auto& [name, t] : reg.buffers) copy_into(name, t);
  }
}

}  // namespace daegan
