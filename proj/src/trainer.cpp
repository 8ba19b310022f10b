#include "borrowdet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "borrowdet/common.hpp"

namespace borrowdet::trainer {

namespace {

void check_probability(double p, const char* name) {
  if (p < 0.0 || p > 1.0) {
    throw ValidationError(std::string("augment config: ") + name + " must lie in [0, 1]");
  }
}

}  // namespace

void AugmentConfig::validate() const {
  check_probability(noise_prob, "noise_prob");
  check_probability(duplication_prob, "duplication_prob");
  check_probability(swap_prob, "swap_prob");
  check_probability(deletion_prob, "deletion_prob");
  if (noise_sigma < 0.0) throw ValidationError("augment config: noise_sigma must be nonnegative");
  if (min_len_for_destructive < 2) {
    throw ValidationError("augment config: min_len_for_destructive must be at least 2");
  }
}

void TrainConfig::validate() const {
  if (temperature <= 0.0) throw ValidationError("train config: temperature must be positive");
  if (learning_rate <= 0.0) throw ValidationError("train config: learning rate must be positive");
  if (batch_size < 2) throw ValidationError("train config: batch size must be at least 2");
  if (epochs < 0) throw ValidationError("train config: epochs must be nonnegative");
}

std::string sampler_name(Sampler sampler) {
  return sampler == Sampler::kConceptBalanced ? "concept_balanced" : "random";
}

Sampler sampler_from_name(const std::string& name) {
  if (name == "concept_balanced") return Sampler::kConceptBalanced;
  if (name == "random") return Sampler::kRandom;
  throw ValidationError("unknown sampler '" + name +
                        "' (expected concept_balanced or random)");
}

std::vector<phon::Segment> augment(const std::vector<phon::Segment>& segments,
                                   const AugmentConfig& config, Rng& rng) {
  config.validate();
  if (segments.empty()) throw ValidationError("augment: empty segment sequence");
  std::vector<phon::Segment> out = segments;
  if (rng.bernoulli(config.duplication_prob)) {
    const auto idx = static_cast<std::size_t>(rng.below(out.size()));
    out.insert(out.begin() + static_cast<std::ptrdiff_t>(idx), out[idx]);
  }
  if (out.size() >= static_cast<std::size_t>(config.min_len_for_destructive) &&
      rng.bernoulli(config.swap_prob)) {
    const auto idx = static_cast<std::size_t>(rng.below(out.size() - 1));
    std::swap(out[idx], out[idx + 1]);
  }
  if (out.size() >= static_cast<std::size_t>(config.min_len_for_destructive) &&
      rng.bernoulli(config.deletion_prob)) {
    const auto idx = static_cast<std::size_t>(rng.below(out.size()));
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(idx));
  }
  return out;
}

std::vector<FormBatch> make_batches(const corpus::Wordlist& wordlist, int batch_size,
                                    Sampler sampler, std::uint64_t seed) {
  if (batch_size < 2) throw ValidationError("make_batches: batch size must be at least 2");
  const std::size_t n = wordlist.forms.size();
  if (n == 0) throw ValidationError("make_batches: empty wordlist");
  if (static_cast<std::size_t>(batch_size) > n) {
    throw ValidationError("make_batches: batch size " + std::to_string(batch_size) +
                          " exceeds the dataset size " + std::to_string(n));
  }
  const std::size_t n_batches =
      (n + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size);
  std::vector<FormBatch> batches(n_batches);
  Rng rng(seed);

  if (sampler == Sampler::kRandom) {
    std::vector<const corpus::WordForm*> order;
    order.reserve(n);
    for (const auto& form : wordlist.forms) order.push_back(&form);
    rng.shuffle(order);
    for (std::size_t i = 0; i < n; ++i) {
      batches[i / static_cast<std::size_t>(batch_size)].push_back(order[i]);
    }
    return batches;
  }

  std::map<std::string, std::vector<const corpus::WordForm*>> by_concept;
  for (const auto& form : wordlist.forms) by_concept[form.concept_id].push_back(&form);
  std::vector<std::string> concept_order;
  concept_order.reserve(by_concept.size());
  for (const auto& [name, _] : by_concept) concept_order.push_back(name);
  rng.shuffle(concept_order);

  std::size_t slot = 0;
  for (const auto& name : concept_order) {
    auto& forms = by_concept[name];
    rng.shuffle(forms);
    for (const auto* form : forms) {
      batches[slot % n_batches].push_back(form);
      ++slot;
    }
  }
  return batches;
}

encoder::Batch<float> make_view_batch(const FormBatch& forms,
                                      const encoder::InputEncoder& input_encoder,
                                      const AugmentConfig& config, Rng& rng) {
  config.validate();
  if (forms.empty()) throw ValidationError("make_view_batch: no forms");
  const std::size_t n_views = forms.size() * 2;

  std::vector<encoder::Matrix<float>> encoded;
  encoded.reserve(n_views);
  std::vector<std::uint8_t> flags;
  flags.reserve(n_views);
  Eigen::Index max_len = 0;
  for (const auto* form : forms) {
    for (int view = 0; view < 2; ++view) {
      const auto segments = augment(form->segments, config, rng);
      encoded.push_back(input_encoder.encode_segments<float>(
          segments, "form '" + form->id + "'"));
      flags.push_back(rng.bernoulli(config.noise_prob) ? 1 : 0);
      max_len = std::max(max_len, encoded.back().rows());
    }
  }

  encoder::Batch<float> batch;
  batch.size = static_cast<Eigen::Index>(n_views);
  batch.max_len = max_len;
  batch.inputs =
      encoder::Matrix<float>::Zero(batch.size * max_len, input_encoder.input_dim());
  batch.mask.assign(static_cast<std::size_t>(batch.size * max_len), 0);
  batch.noise_flags = std::move(flags);
  batch.noise_sigma = config.noise_sigma;
  for (std::size_t v = 0; v < n_views; ++v) {
    const auto& rows = encoded[v];
    const auto base = static_cast<Eigen::Index>(v) * max_len;
    batch.inputs.middleRows(base, rows.rows()) = rows;
    for (Eigen::Index t = 0; t < rows.rows(); ++t) {
      batch.mask[static_cast<std::size_t>(base + t)] = 1;
    }
    batch.lengths.push_back(static_cast<int>(rows.rows()));
    const auto* form = forms[v / 2];
    batch.concepts.push_back(form->concept_id);
    batch.form_ids.push_back(form->id);
  }
  return batch;
}

template <typename S>
NtXentResult<S> nt_xent_loss(const encoder::Matrix<S>& projections, double temperature) {
  if (temperature <= 0.0) throw ValidationError("nt_xent_loss: temperature must be positive");
  const Eigen::Index rows = projections.rows();
  const Eigen::Index dim = projections.cols();
  if (rows < 2 || rows % 2 != 0) {
    throw ValidationError("nt_xent_loss: need an even number of view rows (pairs)");
  }
  const S tau = static_cast<S>(temperature);

  encoder::Vector<S> norms(rows);
  encoder::Matrix<S> unit(rows, dim);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const S n = projections.row(r).norm();
    if (n == S(0)) throw ValidationError("nt_xent_loss: zero-norm projection row");
    norms(r) = n;
    unit.row(r) = projections.row(r) / n;
  }

  const encoder::Matrix<S> sim = unit * unit.transpose();

  double loss = 0.0;
  encoder::Matrix<S> g_sim = encoder::Matrix<S>::Zero(rows, rows);
  const S inv_count = S(1) / static_cast<S>(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Eigen::Index partner = r ^ 1;
    // log-sum-exp over the 2N-1 other rows, max-subtracted so the
    // single-pair identity (N = 1 -> loss 0) holds exactly
    S max_logit = -std::numeric_limits<S>::infinity();
    for (Eigen::Index s = 0; s < rows; ++s) {
      if (s == r) continue;
      max_logit = std::max(max_logit, sim(r, s) / tau);
    }
    S denom = S(0);
    for (Eigen::Index s = 0; s < rows; ++s) {
      if (s == r) continue;
      denom += std::exp(sim(r, s) / tau - max_logit);
    }
    const S log_denom = max_logit + std::log(denom);
    loss += static_cast<double>(log_denom - sim(r, partner) / tau);

    for (Eigen::Index s = 0; s < rows; ++s) {
      if (s == r) continue;
      const S softmax = std::exp(sim(r, s) / tau - log_denom);
      g_sim(r, s) += inv_count / tau * (softmax - (s == partner ? S(1) : S(0)));
    }
  }
  loss /= static_cast<double>(rows);

  // d loss / d unit, then back through the row normalization
  const encoder::Matrix<S> g_unit = (g_sim + g_sim.transpose()) * unit;
  NtXentResult<S> result;
  result.loss = loss;
  result.grad.resize(rows, dim);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const S along = g_unit.row(r).dot(unit.row(r));
    result.grad.row(r) = (g_unit.row(r) - along * unit.row(r)) / norms(r);
  }
  return result;
}

template <typename S>
AdamWState<S> make_adamw_state(const encoder::EncoderConfig& config) {
  AdamWState<S> state;
  state.m = encoder::make_zero_params<S>(config);
  state.v = encoder::make_zero_params<S>(config);
  return state;
}

template <typename S>
void adamw_step(encoder::Params<S>& params, const encoder::Params<S>& grads,
                AdamWState<S>& state, const AdamWConfig& config) {
  auto p_views = params.arrays();
  const auto g_views = grads.arrays();
  auto m_views = state.m.arrays();
  auto v_views = state.v.arrays();
  if (p_views.size() != g_views.size() || p_views.size() != m_views.size()) {
    throw ValidationError("adamw_step: parameter/gradient/state shapes disagree");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t a = 0; a < p_views.size(); ++a) {
    if (p_views[a].size() != g_views[a].size()) {
      throw ValidationError("adamw_step: gradient shape mismatch for " + p_views[a].name);
    }
    S* p = p_views[a].data;
    const S* g = g_views[a].data;
    S* m = m_views[a].data;
    S* v = v_views[a].data;
    for (Eigen::Index i = 0; i < p_views[a].size(); ++i) {
      if (!std::isfinite(static_cast<double>(g[i]))) {
        throw std::runtime_error("adamw_step: non-finite gradient in '" + p_views[a].name +
                                 "' at flat index " + std::to_string(i));
      }
      p[i] -= static_cast<S>(config.learning_rate * config.weight_decay) * p[i];
      m[i] = static_cast<S>(config.beta1) * m[i] +
             static_cast<S>(1.0 - config.beta1) * g[i];
      v[i] = static_cast<S>(config.beta2) * v[i] +
             static_cast<S>(1.0 - config.beta2) * g[i] * g[i];
      const double m_hat = static_cast<double>(m[i]) / bc1;
      const double v_hat = static_cast<double>(v[i]) / bc2;
      p[i] -= static_cast<S>(config.learning_rate * m_hat /
                             (std::sqrt(v_hat) + config.epsilon));
    }
  }
}

TrainResult train(const corpus::Wordlist& wordlist, const encoder::EncoderConfig& encoder_config,
                  const TrainConfig& train_config, const AugmentConfig& augment_config) {
  train_config.validate();
  augment_config.validate();
  if (wordlist.forms.empty()) throw ValidationError("train: empty wordlist");

  TrainResult result;
  result.input_encoder =
      encoder::InputEncoder::from_wordlist(wordlist, encoder_config.encoding_mode);
  encoder::EncoderConfig config = encoder_config;
  config.input_dim = result.input_encoder.input_dim();
  config.validate();

  result.params = encoder::init_params<float>(config, train_config.seed);
  auto state = make_adamw_state<float>(config);
  AdamWConfig opt;
  opt.learning_rate = train_config.learning_rate;

  Rng root(train_config.seed);
  Rng augment_rng = root.fork(1);
  Rng model_rng = root.fork(2);
  Rng batch_seed_rng = root.fork(3);

  long step = 0;
  for (int epoch = 1; epoch <= train_config.epochs; ++epoch) {
    const auto batches = make_batches(wordlist, train_config.batch_size,
                                      train_config.sampler, batch_seed_rng.next_u64());
    for (const auto& batch_forms : batches) {
      auto batch = make_view_batch(batch_forms, result.input_encoder, augment_config,
                                   augment_rng);
      auto tape = encoder::forward(result.params, batch, encoder::Mode::kTrain, model_rng);
      auto loss = nt_xent_loss<float>(tape.projected, train_config.temperature);
      const encoder::Matrix<float> zero_hidden =
          encoder::Matrix<float>::Zero(tape.hidden.rows(), tape.hidden.cols());
      auto grads = encoder::backward(result.params, tape, loss.grad, zero_hidden);
      adamw_step(result.params, grads, state, opt);
      result.log.push_back(TrainLogEntry{step, epoch, loss.loss});
      ++step;
    }
  }
  return result;
}

void write_train_log(const std::vector<TrainLogEntry>& log, const std::string& path) {
  std::ostringstream out;
  out << "STEP\tEPOCH\tLOSS\n";
  for (const auto& entry : log) {
    out << entry.step << '\t' << entry.epoch << '\t' << format_double(entry.loss) << '\n';
  }
  write_file(path, out.str());
}

template NtXentResult<float> nt_xent_loss<float>(const encoder::Matrix<float>&, double);
template NtXentResult<double> nt_xent_loss<double>(const encoder::Matrix<double>&, double);
template AdamWState<float> make_adamw_state<float>(const encoder::EncoderConfig&);
template AdamWState<double> make_adamw_state<double>(const encoder::EncoderConfig&);
template void adamw_step<float>(encoder::Params<float>&, const encoder::Params<float>&,
                                AdamWState<float>&, const AdamWConfig&);
template void adamw_step<double>(encoder::Params<double>&, const encoder::Params<double>&,
                                 AdamWState<double>&, const AdamWConfig&);

}  // namespace borrowdet::trainer
