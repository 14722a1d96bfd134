#include "gapo/policy/sft.hpp"

#include <cmath>
#include <string>

#include "gapo/diff/differentiate.hpp"
#include "gapo/errors.hpp"
#include "gapo/util/rng.hpp"

namespace gapo::policy {

namespace {

std::vector<SeqRef> refs_for(const std::vector<SftExample>& corpus,
                             std::span<const std::size_t> order) {
  std::vector<SeqRef> refs;
  refs.reserve(order.size());
  for (auto i : order) refs.push_back({&corpus[i].prompt, &corpus[i].response});
  return refs;
}

}  // namespace

double mean_nll(const PolicyModel& model, const std::vector<SftExample>& corpus) {
  if (corpus.empty()) throw InputError("mean_nll: empty corpus");
  std::vector<SeqRef> refs;
  for (const auto& ex : corpus) refs.push_back({&ex.prompt, &ex.response});
  diff::Tape tape(false);
  auto theta = tape.variable(diff::Tensor::column(model.params().values()));
  const auto& lp = model.sequence_log_probs(tape, theta, refs).value();
  double total = 0.0;
  for (double v : lp.data) total -= v;
  return total / static_cast<double>(corpus.size());
}

SftResult sft_train(PolicyModel& model, const std::vector<SftExample>& corpus, const SftConfig& config) {
  if (corpus.empty()) throw InputError("sft_train: empty corpus");
  if (config.batch_size == 0) throw InputError("sft_train: batch size must be positive");
  SftResult result;
  result.initial_nll = mean_nll(model, corpus);
  trainer::Optimizer opt(config.optimizer);
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    util::Rng rng(util::derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    const auto order = util::shuffled_indices(corpus.size(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const auto refs = refs_for(corpus, std::span(order).subspan(start, end - start));
      diff::Objective nll = [&](diff::Tape& tape, diff::Var theta) {
        return diff::scale(diff::mean(model.sequence_log_probs(tape, theta, refs)), -1.0);
      };
      diff::ValueAndGradient vg;
      try {
        vg = diff::value_and_grad(nll, model.params());
      } catch (const NumericError& e) {
        throw NumericError("sft step " + std::to_string(step),
                           "SFT diverged at step " + std::to_string(step) + ": " + e.what());
      }
      if (!std::isfinite(vg.value)) {
        throw NumericError("sft step " + std::to_string(step),
                           "SFT diverged at step " + std::to_string(step));
      }
      result.step_nll.push_back(vg.value);
      try {
        opt.step(model.params(), vg.gradient);
      } catch (const NumericError&) {
        throw NumericError("sft step " + std::to_string(step),
                           "SFT update became non-finite at step " + std::to_string(step));
      }
      ++step;
    }
  }
  result.final_nll = mean_nll(model, corpus);
  return result;
}

}  // namespace gapo::policy
