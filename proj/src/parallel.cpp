// SPDX-License-Identifier: Apache-2.0
#include "ssp/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <unordered_map>

#include <omp.h>

#include "ssp/errors.hpp"
#include "ssp/ops.hpp"

namespace ssp {

std::vector<Tensor*> trainable_tensors(ModelParams& params) {
  std::vector<Tensor*> out;
  for (const NamedTensor& nt : named_tensors(params))
    if (nt.tensor->requires_grad()) out.push_back(nt.tensor);
  return out;
}

int resolve_threads(int requested) {
  if (const char* env = std::getenv("SSP_DETERMINISTIC"); env && std::strcmp(env, "1") == 0) return 1;
  return requested > 0 ? requested : omp_get_max_threads();
}

namespace {

struct SampleOut {
  double loss = 0.0;
  bool correct = false;
  std::vector<std::vector<double>> grads;
};

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

SampleOut run_sample(const BatchInput& in, std::size_t i, const std::vector<Tensor*>* trainable) {
  Tape tape;
  Var logits = forward(tape, *in.videos[i], in.config, in.params, in.options);
  Var loss = ops::cross_entropy(logits, in.labels[i]);
  SampleOut out;
  out.loss = loss.value().item();
  out.correct = argmax(logits.value().data()) == in.labels[i];
  if (trainable) {
    tape.backward(loss);
    out.grads.resize(trainable->size());
    std::unordered_map<const Tensor*, std::size_t> slot;
    for (std::size_t k = 0; k < trainable->size(); ++k) slot[(*trainable)[k]] = k;
    for (const auto& [tensor, grad] : tape.param_grads()) {
      auto it = slot.find(tensor);
      if (it == slot.end()) throw ContractError("gradient produced for a tensor outside the trainable set");
      out.grads[it->second].assign(grad.begin(), grad.end());
    }
  }
  return out;
}

void check_batch(const BatchInput& in) {
  if (in.videos.size() != in.labels.size()) throw ContractError("batch: videos and labels differ in length");
  if (in.videos.empty()) throw ContractError("batch: empty");
}

BatchResult merge(std::vector<SampleOut>& samples, const std::vector<Tensor*>& trainable) {
  BatchResult r;
  const double inv = 1.0 / static_cast<double>(samples.size());
  r.grads.resize(trainable.size());
  for (std::size_t k = 0; k < trainable.size(); ++k) r.grads[k].assign(trainable[k]->numel(), 0.0);
  for (SampleOut& s : samples) {
    r.loss += s.loss;
    r.correct += s.correct ? 1 : 0;
    for (std::size_t k = 0; k < trainable.size(); ++k) {
      if (s.grads[k].empty()) continue;
      for (std::size_t e = 0; e < s.grads[k].size(); ++e) r.grads[k][e] += s.grads[k][e];
    }
  }
  r.loss *= inv;
  for (auto& g : r.grads)
    for (double& v : g) v *= inv;
  return r;
}

}  // namespace

BatchResult batch_gradient_serial(const BatchInput& in, const std::vector<Tensor*>& trainable) {
  check_batch(in);
  std::vector<SampleOut> samples;
  samples.reserve(in.videos.size());
  for (std::size_t i = 0; i < in.videos.size(); ++i) samples.push_back(run_sample(in, i, &trainable));
  return merge(samples, trainable);
}

BatchResult batch_gradient(const BatchInput& in, const std::vector<Tensor*>& trainable, int threads) {
  check_batch(in);
  const int n = static_cast<int>(in.videos.size());
  std::vector<SampleOut> samples(in.videos.size());
  std::vector<std::exception_ptr> errors(in.videos.size());
#pragma omp parallel for schedule(static) num_threads(resolve_threads(threads))
  for (int i = 0; i < n; ++i) {
    try {
      samples[i] = run_sample(in, static_cast<std::size_t>(i), &trainable);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return merge(samples, trainable);
}

EvalResult evaluate_batch(const BatchInput& in, int threads) {
  check_batch(in);
  const int n = static_cast<int>(in.videos.size());
  std::vector<SampleOut> samples(in.videos.size());
  std::vector<std::exception_ptr> errors(in.videos.size());
#pragma omp parallel for schedule(static) num_threads(resolve_threads(threads))
  for (int i = 0; i < n; ++i) {
    try {
      samples[i] = run_sample(in, static_cast<std::size_t>(i), nullptr);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  EvalResult r;
  r.count = samples.size();
  for (const SampleOut& s : samples) {
    r.loss += s.loss;
    r.correct += s.correct ? 1 : 0;
  }
  r.loss /= static_cast<double>(r.count);
  return r;
}

}  // namespace ssp
