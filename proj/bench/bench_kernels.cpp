// Serial reference kernels against the production (OpenMP) kernels.
#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "CLI11.hpp"
#include "mefa/numerics/kernels.hpp"
#include "mefa/numerics/random.hpp"

using namespace mefa::num;

namespace {

std::vector<float> random_values(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(2.0 * draw_unit(rng) - 1.0);
  return v;
}

double best_ms(const std::function<void()>& fn, int repeats) {
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

bool same(const std::vector<float>& a, const std::vector<float>& b) { return a == b; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernel benchmark: serial reference vs production kernels"};
  int repeats = 5;
  std::vector<int> threads{1};
  app.add_option("--repeats", repeats, "timed repetitions, best kept");
  app.add_option("--threads", threads, "thread counts for the production kernels")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  Rng rng(1);
  std::printf("%-10s %-18s %8s %12s %12s %8s %6s\n", "kernel", "shape", "threads", "reference_ms", "kernel_ms",
              "speedup", "equal");

  const std::size_t gemm_shapes[][3] = {{544, 64, 64}, {544, 64, 128}, {2720, 64, 64}, {2720, 128, 64}};
  for (const auto& s : gemm_shapes) {
    const std::size_t m = s[0], k = s[1], n = s[2];
    const auto a = random_values(m * k, rng), b = random_values(k * n, rng);
    std::vector<float> ref(m * n), out(m * n);
    const double t_ref = best_ms([&] { kernels::reference::gemm_nn<float>(a, b, ref, m, k, n); }, repeats);
    for (int t : threads) {
      kernels::set_threads(t);
      const double t_ker = best_ms([&] { kernels::gemm_nn<float>(a, b, out, m, k, n, false); }, repeats);
      char shape[32];
      std::snprintf(shape, sizeof shape, "%zux%zux%zu", m, k, n);
      std::printf("%-10s %-18s %8d %12.3f %12.3f %8.2f %6s\n", "gemm_nn", shape, t, t_ref, t_ker, t_ref / t_ker,
                  same(ref, out) ? "yes" : "no");
    }
  }

  const std::size_t attn_shapes[][3] = {{32, 17, 64}, {160, 17, 64}, {64, 40, 64}};
  for (const auto& s : attn_shapes) {
    const std::size_t segments = s[0], len = s[1], d = s[2];
    std::vector<std::size_t> offsets(segments + 1);
    for (std::size_t i = 0; i <= segments; ++i) offsets[i] = i * len;
    const std::size_t rows = segments * len;
    const auto q = random_values(rows * d, rng), kk = random_values(rows * d, rng), v = random_values(rows * d, rng);
    std::vector<float> ref(rows * d), out(rows * d), probs(kernels::attention_prob_size(offsets));
    const double t_ref =
        best_ms([&] { kernels::reference::segment_attention_forward<float>(q, kk, v, offsets, d, ref); }, repeats);
    for (int t : threads) {
      kernels::set_threads(t);
      const double t_ker =
          best_ms([&] { kernels::segment_attention_forward<float>(q, kk, v, offsets, d, out, probs); }, repeats);
      char shape[32];
      std::snprintf(shape, sizeof shape, "%zux%zux%zu", segments, len, d);
      std::printf("%-10s %-18s %8d %12.3f %12.3f %8.2f %6s\n", "attention", shape, t, t_ref, t_ker, t_ref / t_ker,
                  same(ref, out) ? "yes" : "no");
    }
  }
  return 0;
}
