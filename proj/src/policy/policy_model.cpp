#include "gapo/policy/policy_model.hpp"

#include <algorithm>
#include <cmath>

#include "gapo/errors.hpp"
#include "gapo/util/rng.hpp"

namespace gapo::policy {

using diff::Tape;
using diff::Tensor;
using diff::Var;

std::string to_string(Arch arch) {
  return arch == Arch::TabularBigram ? "tabular-bigram" : "mlp-lm";
}

Arch parse_arch(const std::string& text) {
  if (text == "tabular-bigram" || text == "bigram") return Arch::TabularBigram;
  if (text == "mlp-lm" || text == "mlp") return Arch::MlpLm;
  throw ConfigError("unknown architecture '" + text + "'");
}

PolicyModel::PolicyModel(ModelShape shape, diff::ParamVector params)
    : shape_(shape), params_(std::move(params)) {
  if (shape_.vocab < 2) throw InputError("vocabulary must have at least two tokens");
  if (!params_.has_segment("lm_head")) throw InputError("policy parameters need an lm_head segment");
  const auto V = static_cast<std::size_t>(shape_.vocab);
  if (shape_.arch == Arch::TabularBigram) {
    if (params_.size() != V * V) throw InputError("bigram parameters must be V x V");
  } else {
    if (shape_.window < 1 || shape_.embed < 1 || shape_.hidden < 1) {
      throw InputError("mlp-lm dimensions must be positive");
    }
    const auto W = static_cast<std::size_t>(shape_.window);
    const auto E = static_cast<std::size_t>(shape_.embed);
    const auto H = static_cast<std::size_t>(shape_.hidden);
    if (params_.segment("embed").length != (V + 1) * E ||
        params_.segment("hidden").length != W * E * H + H ||
        params_.segment("lm_head").length != H * V + V) {
      throw InputError("mlp-lm segment sizes do not match the shape");
    }
  }
}

PolicyModel PolicyModel::tabular_bigram(int vocab) {
  const auto V = static_cast<std::size_t>(vocab);
  ModelShape shape{Arch::TabularBigram, vocab, 1, 0, 0};
  return PolicyModel(shape, diff::ParamVector::zeros({{"lm_head", V * V}}));
}

PolicyModel PolicyModel::mlp_lm(int vocab, int window, int embed, int hidden, std::uint64_t seed) {
  const auto V = static_cast<std::size_t>(vocab);
  const auto W = static_cast<std::size_t>(window);
  const auto E = static_cast<std::size_t>(embed);
  const auto H = static_cast<std::size_t>(hidden);
  auto params = diff::ParamVector::zeros(
      {{"embed", (V + 1) * E}, {"hidden", W * E * H + H}, {"lm_head", H * V + V}});
  util::Rng rng(seed);
  for (double& v : params.segment_values("embed")) v = rng.normal();
  auto hidden_seg = params.segment_values("hidden");
  const double fan_in = 1.0 / std::sqrt(static_cast<double>(W * E));
  for (std::size_t i = 0; i < W * E * H; ++i) hidden_seg[i] = fan_in * rng.normal();
  return PolicyModel(ModelShape{Arch::MlpLm, vocab, window, embed, hidden}, std::move(params));
}

PolicyModel PolicyModel::create(const ModelShape& shape, std::uint64_t seed) {
  if (shape.arch == Arch::TabularBigram) return tabular_bigram(shape.vocab);
  return mlp_lm(shape.vocab, shape.window, shape.embed, shape.hidden, seed);
}

void PolicyModel::validate(const TokenSeq& seq, bool allow_empty) const {
  if (!allow_empty && seq.empty()) throw InputError("response must not be empty");
  for (Token t : seq) {
    if (t < 0 || t >= shape_.vocab) {
      throw InputError("token id " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(shape_.vocab));
    }
  }
}

Var PolicyModel::logits_for(Var theta, const std::vector<int>& contexts,
                            std::size_t positions) const {
  const auto V = static_cast<std::size_t>(shape_.vocab);
  if (shape_.arch == Arch::TabularBigram) {
    const auto& seg = params_.segment("lm_head");
    Var table = diff::slice(theta, seg.offset, V, V);
    return diff::gather_rows(table, contexts);
  }
  const auto W = static_cast<std::size_t>(shape_.window);
  const auto E = static_cast<std::size_t>(shape_.embed);
  const auto H = static_cast<std::size_t>(shape_.hidden);
  const auto& es = params_.segment("embed");
  const auto& hs = params_.segment("hidden");
  const auto& ls = params_.segment("lm_head");

  Var emb = diff::slice(theta, es.offset, V + 1, E);
  Var x = diff::reshape(diff::gather_rows(emb, contexts), positions, W * E);
  Var w1 = diff::slice(theta, hs.offset, W * E, H);
  Var b1 = diff::slice(theta, hs.offset + W * E * H, 1, H);
  Var h = diff::tanh(diff::add_row(diff::matmul(x, w1), b1));
  Var w2 = diff::slice(theta, ls.offset, H, V);
  Var b2 = diff::slice(theta, ls.offset + H * V, 1, V);
  return diff::add_row(diff::matmul(h, w2), b2);
}

Var PolicyModel::sequence_log_probs(Tape& /*tape*/, Var theta, std::span<const SeqRef> requests) const {
  if (requests.empty()) throw InputError("sequence_log_probs: no requests");
  const bool bigram = shape_.arch == Arch::TabularBigram;
  const auto W = static_cast<std::size_t>(shape_.window);
  const int pad = shape_.vocab;

  std::vector<int> contexts, targets, segments;
  std::vector<int> history;
  for (std::size_t r = 0; r < requests.size(); ++r) {
    const TokenSeq& x = *requests[r].prompt;
    const TokenSeq& y = *requests[r].response;
    validate(x, true);
    validate(y, false);
    history.assign(x.begin(), x.end());
    for (Token tok : y) {
      if (bigram) {
        contexts.push_back(history.empty() ? -1 : history.back());
      } else {
        for (std::size_t w = 0; w < W; ++w) {
          // Oldest slot first; positions before the start are padding.
          const std::size_t back = W - w;
          contexts.push_back(history.size() >= back ? history[history.size() - back] : pad);
        }
      }
      targets.push_back(tok);
      segments.push_back(static_cast<int>(r));
      history.push_back(tok);
    }
  }
  const std::size_t positions = targets.size();
  Var logits = logits_for(theta, contexts, positions);
  Var token_lp = diff::sub(diff::pick_cols(logits, std::move(targets)), diff::logsumexp_rows(logits));
  return diff::segment_sum(token_lp, std::move(segments), requests.size());
}

double PolicyModel::log_prob(const TokenSeq& x, const TokenSeq& y) const {
  Tape tape(false);
  Var theta = tape.variable(Tensor::column(params_.values()));
  SeqRef req{&x, &y};
  return sequence_log_probs(tape, theta, std::span<const SeqRef>(&req, 1)).item();
}

double PolicyModel::p_reward(const TokenSeq& x, const TokenSeq& y) const {
  return log_prob(x, y) / static_cast<double>(y.size());
}

std::vector<double> PolicyModel::p_rewards(std::span<const SeqRef> requests) const {
  Tape tape(false);
  Var theta = tape.variable(Tensor::column(params_.values()));
  const auto& lp = sequence_log_probs(tape, theta, requests).value();
  std::vector<double> out(requests.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = lp.data[i] / static_cast<double>(requests[i].response->size());
  }
  return out;
}

std::vector<double> PolicyModel::next_token_probs(const TokenSeq& prefix) const {
  validate(prefix, true);
  std::vector<double> probs(static_cast<std::size_t>(shape_.vocab));
  // Score every candidate next token as a length-1 response.
  std::vector<TokenSeq> singles(probs.size());
  std::vector<SeqRef> reqs(probs.size());
  for (std::size_t t = 0; t < probs.size(); ++t) {
    singles[t] = {static_cast<Token>(t)};
    reqs[t] = {&prefix, &singles[t]};
  }
  Tape tape(false);
  Var theta = tape.variable(Tensor::column(params_.values()));
  const auto& lp = sequence_log_probs(tape, theta, reqs).value();
  for (std::size_t t = 0; t < probs.size(); ++t) probs[t] = std::exp(lp.data[t]);
  return probs;
}

ReferenceModel freeze_reference(const PolicyModel& model) { return ReferenceModel(model); }

}  // namespace gapo::policy
