#include "ckad/bench.hpp"

#include "ckad/attention.hpp"
#include "ckad/synthgen.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>

namespace ckad {

std::size_t peak_resident_bytes() {
  std::ifstream in("/proc/self/status");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("VmHWM:", 0) == 0) {
      std::istringstream ss(line.substr(6));
      std::size_t kb = 0;
      ss >> kb;
      return kb * 1024;
    }
  }
  return 0;
}

double linear_fit_r2(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ArgumentError("linear_fit_r2: need at least two paired points");
  const auto n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw ArgumentError("linear_fit_r2: x values are all equal");
  if (syy == 0.0) return 1.0;
  return sxy * sxy / (sxx * syy);
}

namespace {

template <typename Fn>
double median_seconds(int repeats, Fn&& fn) {
  std::vector<double> t;
  for (int r = 0; r < std::max(1, repeats); ++r) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  std::nth_element(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(t.size() / 2), t.end());
  return t[t.size() / 2];
}

MatrixXf random_tokens(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> nd;
  MatrixXf x(n, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = nd(rng);
  return x;
}

}  // namespace

BenchResult run_bench(const BenchConfig& cfg) {
  BenchResult res;
  std::vector<std::pair<std::string, ModelHyper>> variants;
  ModelHyper lin = cfg.hyper;
  lin.use_kaa = false;
  variants.emplace_back("linear", lin);
  if (cfg.include_kaa) {
    ModelHyper kaa = cfg.hyper;
    kaa.use_kaa = true;
    variants.emplace_back("kaa", kaa);
  }
  volatile float sink = 0.0f;
  for (const auto& [name, hyper] : variants) {
    const Model<float> model(hyper);
    std::vector<double> xs, ys;
    for (Eigen::Index n : cfg.sizes) {
      const MatrixXf x = random_tokens(n, hyper.d, static_cast<std::uint64_t>(n));
      sink = sink + model.forward(x, Mode::eval)(0, 0);  // warm-up
      const double s = median_seconds(cfg.repeats, [&] { sink = sink + model.forward(x, Mode::eval)(0, 0); });
      res.rows.push_back({n, s, peak_resident_bytes(), name});
      xs.push_back(static_cast<double>(n));
      ys.push_back(s);
    }
    if (name == "linear" && xs.size() >= 2) res.linear_r2 = linear_fit_r2(xs, ys);
  }
  const RandomFeatureMap<float> map(cfg.hyper.d, cfg.hyper.m, mix_seed(cfg.hyper.seed, 300));
  for (Eigen::Index n : cfg.oracle_sizes) {
    // unit-norm rows keep the kernel values moderate
    MatrixXf q = random_tokens(n, cfg.hyper.d, 1000 + static_cast<std::uint64_t>(n));
    MatrixXf k = random_tokens(n, cfg.hyper.d, 2000 + static_cast<std::uint64_t>(n));
    const MatrixXf v = random_tokens(n, cfg.hyper.d, 3000 + static_cast<std::uint64_t>(n));
    q.rowwise().normalize();
    k.rowwise().normalize();
    const double s = median_seconds(cfg.repeats, [&] { sink = sink + kernel_oracle<float>(q, k, v, map)(0, 0); });
    res.rows.push_back({n, s, peak_resident_bytes(), "quadratic"});
  }
  return res;
}

void write_bench_csv(const BenchResult& result, std::ostream& os) {
  os << "n,seconds,bytes,variant\n";
  for (const auto& r : result.rows) os << r.n << ',' << r.seconds << ',' << r.bytes << ',' << r.variant << '\n';
}

std::vector<double> doubling_ratios(const BenchResult& result, const std::string& variant) {
  std::map<Eigen::Index, double> t;
  for (const auto& r : result.rows)
    if (r.variant == variant) t[r.n] = r.seconds;
  std::vector<double> out;
  for (const auto& [n, s] : t) {
    const auto it = t.find(2 * n);
    if (it != t.end()) out.push_back(it->second / s);
  }
  return out;
}

}  // namespace ckad
