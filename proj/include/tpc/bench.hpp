#pragma once

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "tpc/vit.hpp"

namespace tpc {

struct BenchOptions {
  int repetitions = 20;
  int warmup = 3;
  int threads = 1;  // 1: single-thread; >1: images of a batch split across threads
  const std::vector<int>* forced_halting = nullptr;
};

struct BenchResult {
  double images_per_sec = 0;  // batch size / median batch latency
  double p50_ms = 0;
  double p95_ms = 0;
  int threads = 1;
  int batch = 0;
};

/// Worker cap from TPC_THREADS, else the hardware concurrency.
inline int thread_cap() {
  if (const char* env = std::getenv("TPC_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Nearest-rank percentile of an unsorted sample.
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::max(0.0, std::ceil(q * static_cast<double>(v.size())) - 1));
  return v[std::min(rank, v.size() - 1)];
}

/// Times inference forwards (no tape) over `images`, one batch per repetition.
template <typename Scalar>
BenchResult bench_throughput(const VitParams<Scalar>& params, const ModelConfig& cfg,
                             const std::vector<Matrix<Scalar>>& images, const BenchOptions& opt) {
  if (opt.repetitions < 10 || opt.warmup < 3) throw ContractError("bench: need >= 10 repetitions after >= 3 warmup runs");
  if (images.empty()) throw ContractError("bench: empty batch");
  const int threads = std::clamp(opt.threads, 1, static_cast<int>(images.size()));
  ForwardOptions fo;
  fo.forced_halting = opt.forced_halting;

  auto run_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      auto r = forward(params, cfg, images[i], fo);
      if (!r.logits.defined()) throw ContractError("bench: forward produced no logits");
    }
  };
  auto run_batch = [&] {
    if (threads == 1) {
      run_range(0, images.size());
      return;
    }
    std::vector<std::thread> pool;
    const std::size_t chunk = (images.size() + static_cast<std::size_t>(threads) - 1) / static_cast<std::size_t>(threads);
    for (int t = 0; t < threads; ++t) {
      const std::size_t b = static_cast<std::size_t>(t) * chunk;
      const std::size_t e = std::min(images.size(), b + chunk);
      if (b < e) pool.emplace_back(run_range, b, e);
    }
    for (auto& th : pool) th.join();
  };

  for (int i = 0; i < opt.warmup; ++i) run_batch();
  std::vector<double> ms;
  for (int i = 0; i < opt.repetitions; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run_batch();
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  BenchResult r;
  r.threads = threads;
  r.batch = static_cast<int>(images.size());
  r.p50_ms = percentile(ms, 0.5);
  r.p95_ms = percentile(ms, 0.95);
  r.images_per_sec = r.p50_ms > 0 ? 1000.0 * static_cast<double>(images.size()) / r.p50_ms : 0;
  return r;
}

/// Halting layers cycling through 1..L-1 (CLS at L), so patch tokens average
/// about L/2 layers.
inline std::vector<int> half_depth_schedule(int tokens, int depth) {
  std::vector<int> h(static_cast<std::size_t>(tokens), depth);
  const int span = std::max(1, depth - 1);
  for (int k = 1; k < tokens; ++k) h[static_cast<std::size_t>(k)] = 1 + (k - 1) % span;
  return h;
}

}  // namespace tpc
