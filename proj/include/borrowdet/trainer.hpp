#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "borrowdet/corpus.hpp"
#include "borrowdet/encoder.hpp"
#include "borrowdet/rng.hpp"

namespace borrowdet::trainer {

struct AugmentConfig {
  double noise_prob = 0.5;
  double noise_sigma = 0.1;
  double duplication_prob = 0.1;
  double swap_prob = 0.0;      // ablations only
  double deletion_prob = 0.0;  // ablations only
  int min_len_for_destructive = 4;

  void validate() const;
};

enum class Sampler { kConceptBalanced, kRandom };

std::string sampler_name(Sampler sampler);
Sampler sampler_from_name(const std::string& name);

struct TrainConfig {
  double temperature = 0.05;
  double learning_rate = 0.001;
  int batch_size = 128;
  int epochs = 4;
  std::uint64_t seed = 42;
  Sampler sampler = Sampler::kConceptBalanced;

  void validate() const;
};

// Segment-level view edits. Order: duplication, then adjacent swap, then
// deletion; each fires independently and the length gate for the
// destructive edits is checked against the current length.
std::vector<phon::Segment> augment(const std::vector<phon::Segment>& segments,
                                   const AugmentConfig& config, Rng& rng);

using FormBatch = std::vector<const corpus::WordForm*>;

// Partition of the wordlist into ceil(N / batch_size) batches. The
// concept-balanced sampler deals each concept's forms round-robin through a
// batch pointer that carries across concepts, so same-concept forms land in
// different batches whenever possible while batch sizes stay within one.
std::vector<FormBatch> make_batches(const corpus::Wordlist& wordlist, int batch_size,
                                    Sampler sampler, std::uint64_t seed);

// Two augmented views per form, interleaved (rows 2i and 2i+1 are the
// positive pair), with per-view Gaussian-noise flags drawn at noise_prob.
encoder::Batch<float> make_view_batch(const FormBatch& forms,
                                      const encoder::InputEncoder& input_encoder,
                                      const AugmentConfig& config, Rng& rng);

template <typename S>
struct NtXentResult {
  double loss = 0.0;
  encoder::Matrix<S> grad;  // d loss / d projections, same shape as the input
};

// Contrastive loss over 2N l2-normalized rows: each view's positive is its
// interleaved partner and the denominator sums over the 2N-1 other rows;
// the total is the mean over all 2N views.
template <typename S>
NtXentResult<S> nt_xent_loss(const encoder::Matrix<S>& projections, double temperature);

struct AdamWConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

template <typename S>
struct AdamWState {
  encoder::Params<S> m, v;
  long step = 0;
};

template <typename S>
AdamWState<S> make_adamw_state(const encoder::EncoderConfig& config);

// Bias-corrected moment updates with decoupled weight decay (the decay
// shrink is applied before the moment update). Throws on non-finite
// gradients, naming the offending array.
template <typename S>
void adamw_step(encoder::Params<S>& params, const encoder::Params<S>& grads,
                AdamWState<S>& state, const AdamWConfig& config);

struct TrainLogEntry {
  long step = 0;
  int epoch = 0;
  double loss = 0.0;
};

struct TrainResult {
  encoder::Params<float> params;
  encoder::InputEncoder input_encoder;
  std::vector<TrainLogEntry> log;
};

TrainResult train(const corpus::Wordlist& wordlist, const encoder::EncoderConfig& encoder_config,
                  const TrainConfig& train_config, const AugmentConfig& augment_config);

// TSV `STEP, EPOCH, LOSS`.
void write_train_log(const std::vector<TrainLogEntry>& log, const std::string& path);

}  // namespace borrowdet::trainer
