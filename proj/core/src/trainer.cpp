#include "mcs/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "mcs/ops.hpp"

namespace mcs {

CriticParams CriticParams::init(int d_feat, int d_hidden, int heads, RngStream& rng) {
  CriticParams p;
  p.attn = AttentionParams::init(d_hidden, d_feat, d_hidden, d_hidden, rng);
  p.val_w = glorot(d_hidden, 1, rng);
  p.val_b = zeros_param({1});
  p.heads = heads;
  return p;
}

void CriticParams::collect(const std::string& prefix, ParamList& out) const {
  attn.collect(prefix + ".attn", out);
  out.push_back({prefix + ".val_w", val_w});
  out.push_back({prefix + ".val_b", val_b});
}

Tensor critic_values(const Tensor& obs_stack, const Tensor& m_bar, int entity_rows,
                     const CriticParams& p) {
  Tensor qp = matmul(m_bar, p.attn.wq);
  Tensor kp = matmul(obs_stack, p.attn.wk);
  Tensor vp = matmul(obs_stack, p.attn.wv);
  Tensor z = matmul(attention_segments(qp, kp, vp, p.heads, 1, entity_rows), p.attn.wz);
  return linear(z, p.val_w, p.val_b);
}

McsModel McsModel::init(const TrainConfig& cfg, int d_feat, int a_max, RngStream& rng) {
  McsModel m;
  m.comm.encoder = MessageEncoderParams::init(d_feat, cfg.hidden, cfg.message_dim,
                                              cfg.encoder_blocks, cfg.heads, cfg.ffn_hidden, rng);
  m.comm.gate = CommGateParams::init(cfg.message_dim, cfg.hidden, rng);
  m.comm.agg = AggregatorParams::init(cfg.message_dim, cfg.hidden, rng);
  m.policy = PolicyParams::init(d_feat, cfg.hidden, a_max, cfg.heads, rng);
  m.critic = CriticParams::init(d_feat, cfg.hidden, cfg.heads, rng);
  m.pred = PredictorParams::init(cfg.message_dim, cfg.hidden, a_max, cfg.predictor_blocks,
                                 cfg.heads, cfg.ffn_hidden, rng);
  return m;
}

ParamList McsModel::named_params() const {
  ParamList out;
  comm.encoder.collect("encoder", out);
  comm.gate.collect("gate", out);
  comm.agg.collect("agg", out);
  policy.collect("policy", out);
  critic.collect("critic", out);
  pred.collect("pred", out);
  return out;
}

std::vector<Tensor> McsModel::actor_tensors() const {
  ParamList named;
  comm.encoder.collect("encoder", named);
  comm.gate.collect("gate", named);
  comm.agg.collect("agg", named);
  policy.collect("policy", named);
  pred.collect("pred", named);
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (auto& p : named) out.push_back(p.tensor);
  return out;
}

std::vector<Tensor> McsModel::critic_tensors() const {
  ParamList named;
  critic.collect("critic", named);
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (auto& p : named) out.push_back(p.tensor);
  return out;
}

std::vector<Tensor> McsModel::all_tensors() const {
  std::vector<Tensor> out = actor_tensors();
  for (auto& t : critic_tensors()) out.push_back(t);
  return out;
}

void compute_advantages(RolloutBuffer& buffer, double gamma, double lambda) {
  const long T = static_cast<long>(buffer.steps.size());
  if (T == 0) return;
  const int n = static_cast<int>(buffer.steps[0].values.size());
  if (static_cast<int>(buffer.bootstrap_values.size()) != n) {
    throw std::runtime_error("compute_advantages: missing bootstrap values");
  }
  for (auto& s : buffer.steps) {
    s.advantages.assign(static_cast<std::size_t>(n), 0.0);
    s.targets.assign(static_cast<std::size_t>(n), 0.0);
  }
  for (int i = 0; i < n; ++i) {
    double gae = 0.0;
    for (long t = T - 1; t >= 0; --t) {
      auto& s = buffer.steps[static_cast<std::size_t>(t)];
      const double nonterminal = s.done ? 0.0 : 1.0;
      const double v_next =
          t == T - 1 ? buffer.bootstrap_values[static_cast<std::size_t>(i)]
                     : buffer.steps[static_cast<std::size_t>(t + 1)].values[static_cast<std::size_t>(i)];
      const double delta =
          s.reward + gamma * v_next * nonterminal - s.values[static_cast<std::size_t>(i)];
      gae = delta + gamma * lambda * nonterminal * gae;
      s.advantages[static_cast<std::size_t>(i)] = gae;
      s.targets[static_cast<std::size_t>(i)] = gae + s.values[static_cast<std::size_t>(i)];
    }
  }
}

Adam::Adam(std::vector<Tensor> params, double lr, double eps, double beta1, double beta2)
    : params_(std::move(params)), lr_(lr), eps_(eps), beta1_(beta1), beta2_(beta2) {
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.size()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(p.size()), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    auto vals = params_[pi].values();
    auto grads = params_[pi].grad();
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (std::size_t i = 0; i < vals.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * grads[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * grads[i] * grads[i];
      vals[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

StepDecision act_step(const std::vector<Tensor>& obs, const McsModel& model,
                      const TrainConfig& cfg, int action_width, RngStream* rng, bool greedy,
                      bool with_values) {
  StepDecision d;
  const GateMode mode = cfg.no_mask ? GateMode::AllOnes : GateMode::Learned;
  d.comm = communicate(obs, model.comm, cfg.alpha_hat, cfg.tau, rng, mode, true);
  const int n = static_cast<int>(obs.size());
  const int dh = model.comm.agg.gru.hidden_dim();
  for (int i = 0; i < n; ++i) {
    Tensor m_bar = slice_rows(d.comm.aggregated, i, 1);
    ActResult a = attend_and_act(obs[static_cast<std::size_t>(i)], m_bar, model.policy,
                                 action_width, rng, greedy);
    d.actions.push_back(a.action);
    d.log_probs.push_back(a.log_prob);
  }
  if (with_values) {
    Tensor v = critic_values(concat_rows(obs), d.comm.aggregated, obs[0].dim(0), model.critic);
    for (int i = 0; i < n; ++i) d.values.push_back(v.at(i, 0));
  }
  (void)dh;
  return d;
}

Trainer::Trainer(TrainConfig cfg) : Trainer(std::move(cfg), {}) {}

Trainer::Trainer(TrainConfig cfg, std::vector<TaskSpec> specs)
    : cfg_(std::move(cfg)), shuffle_rng_(derive_seed(cfg_.seed, "shuffle")) {
  specs_ = specs.empty() ? make_series(cfg_.series, cfg_.env) : std::move(specs);
  const int d_feat = specs_[0].feature_width();
  a_max_ = 0;
  for (const auto& s : specs_) {
    if (s.feature_width() != d_feat) {
      throw std::runtime_error("tasks of one series must share the feature width");
    }
    a_max_ = std::max(a_max_, s.action_width);
  }
  RngStream init_rng(derive_seed(cfg_.seed, "init"));
  model_ = McsModel::init(cfg_, d_feat, a_max_, init_rng);
  const int k = static_cast<int>(specs_.size());
  for (int i = 0; i < k; ++i) {
    envs_.push_back(std::make_unique<AliceBobEnv>(specs_[static_cast<std::size_t>(i)]));
    episode_counter_.push_back(0);
    policy_rng_.emplace_back(derive_seed(cfg_.seed, "rollout", static_cast<std::uint64_t>(i)));
    RolloutBuffer buf;
    buf.spec = specs_[static_cast<std::size_t>(i)];
    buffers_.push_back(std::move(buf));
    cur_obs_.emplace_back();
    reset_env(i);
  }
  horizon_ = cfg_.horizon_override > 0
                 ? cfg_.horizon_override
                 : static_cast<long>(cfg_.batch_size) * specs_[0].max_steps;
  actor_opt_ = std::make_unique<Adam>(model_.actor_tensors(), cfg_.lr, cfg_.opt_eps);
  critic_opt_ = std::make_unique<Adam>(model_.critic_tensors(), cfg_.critic_lr, cfg_.opt_eps);
  norm_adv_.resize(static_cast<std::size_t>(k));
}

void Trainer::reset_env(int task_index) {
  const auto ti = static_cast<std::size_t>(task_index);
  const std::uint64_t ep_seed =
      derive_seed(cfg_.seed, "env", static_cast<std::uint64_t>(task_index), episode_counter_[ti]);
  ++episode_counter_[ti];
  cur_obs_[ti] = envs_[ti]->reset(ep_seed);
}

std::vector<double> Trainer::bootstrap_values(int task_index) {
  const auto ti = static_cast<std::size_t>(task_index);
  const GateMode mode = cfg_.no_mask ? GateMode::AllOnes : GateMode::Learned;
  // Noise-free forward: the boundary value is an estimate, not training data.
  CommResult c = communicate(cur_obs_[ti], model_.comm, cfg_.alpha_hat, cfg_.tau, nullptr, mode,
                             true);
  Tensor v = critic_values(concat_rows(cur_obs_[ti]), c.aggregated, cur_obs_[ti][0].dim(0),
                           model_.critic);
  std::vector<double> out;
  for (int i = 0; i < v.dim(0); ++i) out.push_back(v.at(i, 0));
  return out;
}

void Trainer::collect() {
  for (auto& b : buffers_) b.clear();
  adv_ready_ = false;
  double density_acc = 0.0;
  long density_count = 0;
  const int k = static_cast<int>(specs_.size());
  for (long t = 0; t < horizon_; ++t) {
    for (int i = 0; i < k; ++i) {
      const auto ti = static_cast<std::size_t>(i);
      if (envs_[ti]->done()) reset_env(i);
      const TaskSpec& spec = specs_[ti];
      StepDecision d = act_step(cur_obs_[ti], model_, cfg_, spec.action_width, &policy_rng_[ti],
                                false, true);
      StepResult sr = envs_[ti]->step(d.actions);

      StepRecord rec;
      rec.obs.reserve(static_cast<std::size_t>(spec.num_agents) * spec.obs_rows() *
                      spec.feature_width());
      for (const auto& o : cur_obs_[ti]) {
        rec.obs.insert(rec.obs.end(), o.values().begin(), o.values().end());
      }
      auto copy_vals = [](const Tensor& t2, std::vector<double>& dst) {
        dst.assign(t2.values().begin(), t2.values().end());
      };
      copy_vals(d.comm.noise, rec.noise);
      copy_vals(d.comm.messages, rec.messages);
      copy_vals(d.comm.scores, rec.scores);
      copy_vals(d.comm.mask, rec.mask);
      copy_vals(d.comm.aggregated, rec.aggregated);
      rec.actions = d.actions;
      rec.log_probs = d.log_probs;
      rec.values = d.values;
      rec.reward = sr.reward;
      rec.done = sr.done;
      rec.win = sr.win;
      buffers_[ti].steps.push_back(std::move(rec));
      cur_obs_[ti] = sr.observations;

      const int n = spec.num_agents;
      if (n > 1) {
        int nonzero = 0;
        for (int a = 0; a < n; ++a) {
          for (int b = 0; b < n; ++b) {
            if (a != b && d.comm.mask.at(a, b) != 0.0) ++nonzero;
          }
        }
        density_acc += static_cast<double>(nonzero) / (n * (n - 1));
        ++density_count;
      }
    }
  }
  for (int i = 0; i < k; ++i) {
    const auto ti = static_cast<std::size_t>(i);
    const int n = specs_[ti].num_agents;
    if (envs_[ti]->done()) {
      buffers_[ti].bootstrap_values.assign(static_cast<std::size_t>(n), 0.0);
    } else {
      buffers_[ti].bootstrap_values = bootstrap_values(i);
    }
  }
  steps_done_ += horizon_;
  last_mask_density_ = density_count > 0 ? density_acc / density_count : 0.0;
}

void Trainer::prepare_advantages() {
  if (adv_ready_) return;
  for (std::size_t k = 0; k < buffers_.size(); ++k) {
    compute_advantages(buffers_[k], cfg_.gamma, cfg_.gae_lambda);
    const long T = static_cast<long>(buffers_[k].steps.size());
    const int n = specs_[k].num_agents;
    auto& flat = norm_adv_[k];
    flat.assign(static_cast<std::size_t>(T) * n, 0.0);
    double mean = 0.0;
    for (long t = 0; t < T; ++t) {
      for (int i = 0; i < n; ++i) {
        flat[static_cast<std::size_t>(t) * n + i] =
            buffers_[k].steps[static_cast<std::size_t>(t)].advantages[static_cast<std::size_t>(i)];
        mean += flat[static_cast<std::size_t>(t) * n + i];
      }
    }
    mean /= static_cast<double>(flat.size());
    double var = 0.0;
    for (double v : flat) var += (v - mean) * (v - mean);
    var /= static_cast<double>(flat.size());
    const double inv = 1.0 / (std::sqrt(var) + 1e-8);
    for (double& v : flat) v = (v - mean) * inv;
  }
  adv_ready_ = true;
}

TaskLosses Trainer::forward_losses(int task_index, const std::vector<int>& indices) {
  prepare_advantages();
  const auto ti = static_cast<std::size_t>(task_index);
  const TaskSpec& spec = specs_[ti];
  const RolloutBuffer& buf = buffers_[ti];
  const int s = static_cast<int>(indices.size());
  const int n = spec.num_agents;
  const int e = spec.obs_rows();
  const int f = spec.feature_width();
  const int dm = cfg_.message_dim;

  Tensor obs_stack = Tensor::zeros({s * n * e, f});
  std::vector<int> actions(static_cast<std::size_t>(s) * n);
  std::vector<double> lp_old(static_cast<std::size_t>(s) * n);
  std::vector<double> adv(static_cast<std::size_t>(s) * n);
  std::vector<double> tgt(static_cast<std::size_t>(s) * n);
  std::vector<std::vector<double>> noise_cols(static_cast<std::size_t>(n) * n);
  for (auto& c : noise_cols) c.assign(static_cast<std::size_t>(s), 0.0);

  auto ov = obs_stack.values();
  const std::size_t obs_step = static_cast<std::size_t>(n) * e * f;
  for (int b = 0; b < s; ++b) {
    const StepRecord& rec = buf.steps[static_cast<std::size_t>(indices[static_cast<std::size_t>(b)])];
    std::copy(rec.obs.begin(), rec.obs.end(), ov.begin() + static_cast<std::ptrdiff_t>(b * obs_step));
    for (int i = 0; i < n; ++i) {
      actions[static_cast<std::size_t>(b) * n + i] = rec.actions[static_cast<std::size_t>(i)];
      lp_old[static_cast<std::size_t>(b) * n + i] = rec.log_probs[static_cast<std::size_t>(i)];
      adv[static_cast<std::size_t>(b) * n + i] =
          norm_adv_[ti][static_cast<std::size_t>(indices[static_cast<std::size_t>(b)]) * n + i];
      tgt[static_cast<std::size_t>(b) * n + i] = rec.targets[static_cast<std::size_t>(i)];
      for (int j = 0; j < n; ++j) {
        noise_cols[static_cast<std::size_t>(i) * n + j][static_cast<std::size_t>(b)] =
            rec.noise[static_cast<std::size_t>(i) * n + j];
      }
    }
  }

  // Fresh forward pass so gradients reach the encoder through every path.
  Tensor msgs = encode_messages(obs_stack, e, model_.comm.encoder);

  // Gate values per ordered (sender, receiver) pair from the replayed noise.
  std::vector<Tensor> gate_cols(static_cast<std::size_t>(n) * n);
  if (n > 1) {
    Tensor a_side = matmul(msgs, model_.comm.gate.wq);
    Tensor b_side = matmul(msgs, model_.comm.gate.wk);
    for (int i = 0; i < n; ++i) {
      Tensor ai = slice_rows_strided(a_side, i, n, s);
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        Tensor bj = slice_rows_strided(b_side, j, n, s);
        Tensor logit = matmul(tanh(add(ai, bj)), model_.comm.gate.v);
        Tensor noise = Tensor::from({s, 1}, noise_cols[static_cast<std::size_t>(i) * n + j]);
        Tensor alpha = gumbel_sigmoid(logit, noise, cfg_.tau);
        gate_cols[static_cast<std::size_t>(i) * n + j] =
            cfg_.no_mask ? Tensor::full({s, 1}, 1.0) : threshold_gate(alpha, cfg_.alpha_hat);
      }
    }
  }
  Tensor ones_col = Tensor::full({s, 1}, 1.0);
  for (int i = 0; i < n; ++i) gate_cols[static_cast<std::size_t>(i) * n + i] = ones_col;

  // GRU over senders in ascending order, batched over (step, receiver).
  Tensor h = Tensor::zeros({s * n, model_.comm.agg.gru.hidden_dim()});
  Tensor h_sum;
  for (int l = 0; l < n; ++l) {
    Tensor ml = slice_rows_strided(msgs, l, n, s);
    std::vector<Tensor> parts;
    parts.reserve(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
      parts.push_back(scale_rows(ml, gate_cols[static_cast<std::size_t>(l) * n + j]));
    }
    Tensor xl = interleave_rows(parts);
    h = gru_cell(xl, h, model_.comm.agg.gru);
    h_sum = l == 0 ? h : add(h_sum, h);
  }
  Tensor m_bar = mul_scalar(h_sum, 1.0 / n);

  // Policy head: clipped surrogate with entropy.
  Tensor qp = matmul(m_bar, model_.policy.attn.wq);
  Tensor kp = matmul(obs_stack, model_.policy.attn.wk);
  Tensor vp = matmul(obs_stack, model_.policy.attn.wv);
  Tensor z = matmul(attention_segments(qp, kp, vp, model_.policy.heads, 1, e),
                    model_.policy.attn.wz);
  Tensor logits = linear(z, model_.policy.act_w, model_.policy.act_b);
  Tensor ls = log_softmax(pad_mask_logits(logits, spec.action_width));
  Tensor lp_new = select(ls, actions);
  Tensor ratio = exp(sub(lp_new, Tensor::from({s * n}, lp_old)));
  Tensor adv_t = Tensor::from({s * n}, adv);
  Tensor surr1 = mul(ratio, adv_t);
  Tensor surr2 = mul(clamp(ratio, 1.0 - cfg_.clip, 1.0 + cfg_.clip), adv_t);

  TaskLosses out;
  out.policy_loss = mul_scalar(mean_all(minimum(surr1, surr2)), -1.0);
  Tensor probs = exp(ls);
  out.entropy_mean = mul_scalar(mean_all(sum_rows(mul(probs, ls))), -1.0);

  Tensor values = critic_values(obs_stack, m_bar, e, model_.critic);
  Tensor diff = sub(values, Tensor::from({s * n, 1}, tgt));
  out.value_loss = mean_all(mul(diff, diff));

  out.messages = msgs;
  out.pred_batch.messages = msgs;
  out.pred_batch.actions = actions;
  out.pred_batch.agents_per_step = n;
  out.pred_batch.action_width = spec.action_width;
  (void)dm;
  return out;
}

UpdateStats Trainer::update() {
  const int k = static_cast<int>(specs_.size());
  for (const auto& b : buffers_) {
    if (b.steps.empty()) throw std::runtime_error("update: rollout buffers are empty");
  }
  prepare_advantages();
  const long total = static_cast<long>(buffers_[0].steps.size());
  const double eff_beta = cfg_.no_predictor ? 0.0 : cfg_.beta;
  UpdateStats stats;

  std::vector<std::vector<int>> perm(static_cast<std::size_t>(k));
  for (int epoch = 0; epoch < cfg_.ppo_epochs; ++epoch) {
    for (int t = 0; t < k; ++t) {
      auto& p = perm[static_cast<std::size_t>(t)];
      p.resize(static_cast<std::size_t>(total));
      std::iota(p.begin(), p.end(), 0);
      std::shuffle(p.begin(), p.end(), shuffle_rng_.engine());
    }
    for (int mb = 0; mb < cfg_.mini_batches; ++mb) {
      const long lo = mb * total / cfg_.mini_batches;
      const long hi = (mb + 1) * total / cfg_.mini_batches;
      if (hi <= lo) continue;

      Tape tape;
      Tensor ac_total;
      std::vector<PredictorBatch> pred_batches;
      double pol = 0.0, val = 0.0, ent = 0.0;
      for (int t = 0; t < k; ++t) {
        std::vector<int> idx(perm[static_cast<std::size_t>(t)].begin() + lo,
                             perm[static_cast<std::size_t>(t)].begin() + hi);
        TaskLosses L = forward_losses(t, idx);
        Tensor task_total = sub(add(L.policy_loss, L.value_loss),
                                mul_scalar(L.entropy_mean, cfg_.entropy_coef));
        ac_total = ac_total.defined() ? add(ac_total, task_total) : task_total;
        pol += L.policy_loss.item();
        val += L.value_loss.item();
        ent += L.entropy_mean.item();
        if (eff_beta != 0.0) pred_batches.push_back(L.pred_batch);
      }
      Tensor loss = mul_scalar(ac_total, 1.0 / k);
      double pred_val = 0.0;
      if (eff_beta != 0.0) {
        Tensor pl = predictor_loss(pred_batches, model_.pred);
        pred_val = pl.item();
        loss = add(loss, mul_scalar(pl, eff_beta));
      }
      const double loss_val = loss.item();
      if (!std::isfinite(loss_val)) {
        char msg[256];
        std::snprintf(msg, sizeof(msg),
                      "update aborted: non-finite loss (epoch %d, minibatch %d, policy %.6g, "
                      "value %.6g, entropy %.6g, pred %.6g)",
                      epoch, mb, pol / k, val / k, ent / k, pred_val);
        throw std::runtime_error(msg);
      }
      backward(loss, tape);
      auto all = model_.all_tensors();
      const double gn = clip_grad_norm(all, cfg_.max_grad_norm);
      actor_opt_->step();
      critic_opt_->step();
      actor_opt_->zero_grad();
      critic_opt_->zero_grad();

      stats.policy_loss += pol / k;
      stats.value_loss += val / k;
      stats.entropy += ent / k;
      stats.pred_loss += pred_val;
      stats.total_loss += loss_val;
      stats.grad_norm += gn;
      ++stats.minibatches;
    }
  }
  for (auto& b : buffers_) b.clear();
  adv_ready_ = false;
  if (stats.minibatches > 0) {
    stats.policy_loss /= stats.minibatches;
    stats.value_loss /= stats.minibatches;
    stats.entropy /= stats.minibatches;
    stats.pred_loss /= stats.minibatches;
    stats.total_loss /= stats.minibatches;
    stats.grad_norm /= stats.minibatches;
  }
  return stats;
}

EvalReport Trainer::evaluate(int episodes_per_task) {
  ActionProvider model_policy = [this](int, const AliceBobEnv& env) {
    std::vector<Tensor> obs;
    for (int i = 0; i < env.spec().num_agents; ++i) obs.push_back(env.observe(i));
    StepDecision d = act_step(obs, model_, cfg_, env.spec().action_width, nullptr, true, false);
    return d.actions;
  };
  return evaluate_with(model_policy, episodes_per_task);
}

EvalReport Trainer::evaluate_with(const ActionProvider& provider, int episodes_per_task) {
  EvalReport report;
  report.episodes_per_task = episodes_per_task;
  const long round = eval_round_++;
  for (std::size_t k = 0; k < specs_.size(); ++k) {
    int wins = 0;
    for (int ep = 0; ep < episodes_per_task; ++ep) {
      AliceBobEnv env(specs_[k]);
      env.reset(derive_seed(cfg_.seed, "eval", static_cast<std::uint64_t>(k),
                            static_cast<std::uint64_t>(round) * 100000 +
                                static_cast<std::uint64_t>(ep)));
      while (!env.done()) {
        StepResult r = env.step(provider(static_cast<int>(k), env));
        if (r.done) break;
      }
      if (env.win()) ++wins;
    }
    report.task_ids.push_back(specs_[k].task_id);
    report.win_rates.push_back(static_cast<double>(wins) / episodes_per_task);
  }
  double acc = 0.0;
  for (double w : report.win_rates) acc += w;
  report.avg = report.win_rates.empty() ? 0.0 : acc / static_cast<double>(report.win_rates.size());
  return report;
}

namespace {

std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

Trainer::RunResult Trainer::run(const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  RunResult rr;
  rr.metrics_path = out_dir + "/metrics.csv";
  std::ofstream csv(rr.metrics_path, std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot open metrics file: " + rr.metrics_path);
  csv << "step";
  for (const auto& s : specs_) csv << ",winrate_" << s.task_id;
  csv << ",avg_winrate,policy_loss,value_loss,pred_loss,entropy,mask_density\n";

  auto write_row = [&](long step, const EvalReport& er, const UpdateStats& st, double density) {
    csv << step;
    for (double w : er.win_rates) csv << ',' << fmt_num(w);
    csv << ',' << fmt_num(er.avg) << ',' << fmt_num(st.policy_loss) << ','
        << fmt_num(st.value_loss) << ',' << fmt_num(st.pred_loss) << ',' << fmt_num(st.entropy)
        << ',' << fmt_num(density) << '\n';
    csv.flush();
  };

  EvalReport first = evaluate(cfg_.eval_episodes);
  write_row(0, first, UpdateStats{}, 0.0);

  const long eval_every =
      cfg_.eval_interval > 0 ? cfg_.eval_interval : std::max(horizon_, cfg_.total_steps / 25);
  long next_eval = eval_every;
  const long ckpt_every = cfg_.checkpoint_interval;
  long next_ckpt = ckpt_every > 0 ? ckpt_every : cfg_.total_steps + 1;
  UpdateStats acc;
  int acc_rounds = 0;
  double density_acc = 0.0;
  long last_eval_step = 0;

  auto save_ckpt = [&](const std::string& name) {
    const std::string path = out_dir + "/" + name;
    save_checkpoint(path, model_.named_params());
    rr.checkpoints.emplace_back(steps_done_, path);
  };

  while (steps_done_ < cfg_.total_steps) {
    collect();
    UpdateStats st = update();
    acc.policy_loss += st.policy_loss;
    acc.value_loss += st.value_loss;
    acc.pred_loss += st.pred_loss;
    acc.entropy += st.entropy;
    density_acc += last_mask_density_;
    ++acc_rounds;

    if (steps_done_ >= next_eval || steps_done_ >= cfg_.total_steps) {
      EvalReport er = evaluate(cfg_.eval_episodes);
      UpdateStats mean;
      mean.policy_loss = acc.policy_loss / acc_rounds;
      mean.value_loss = acc.value_loss / acc_rounds;
      mean.pred_loss = acc.pred_loss / acc_rounds;
      mean.entropy = acc.entropy / acc_rounds;
      write_row(steps_done_, er, mean, density_acc / acc_rounds);
      last_eval_step = steps_done_;
      acc = UpdateStats{};
      acc_rounds = 0;
      density_acc = 0.0;
      while (next_eval <= steps_done_) next_eval += eval_every;
    }
    if (steps_done_ >= next_ckpt) {
      save_ckpt("ckpt_step" + std::to_string(steps_done_) + ".bin");
      while (next_ckpt <= steps_done_) next_ckpt += ckpt_every;
    }
  }
  (void)last_eval_step;
  save_ckpt("ckpt_final.bin");
  return rr;
}

}  // namespace mcs
