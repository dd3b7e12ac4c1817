#pragma once

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <dmfont/dmfont.hpp>

// Shared fixtures for the test suite: a scratch directory, a synthetic glyph
// corpus whose appearance is a pure function of (components, font), and a
// finite-difference gradient checker.
namespace tu {

using namespace dmfont;

class TempDir {
 public:
  TempDir() {
    auto base = std::filesystem::temp_directory_path();
    for (int i = 0; i < 10000; ++i) {
      auto p = base / ("dmfont_test_" + std::to_string(::getpid()) + "_" + std::to_string(i));
      std::error_code ec;
      if (std::filesystem::create_directory(p, ec)) {
        path_ = p;
        return;
      }
    }
    std::abort();  // no scratch space
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }
  std::string sub(const std::string& rel) const { return (path_ / rel).string(); }

 private:
  std::filesystem::path path_;
};

// 3 types x (4,5,2) labels = 40 characters in the private use area.
inline ComponentSchema toy_schema() {
  std::vector<ComponentType> types(3);
  types[0].name = "top";
  types[0].labels = {"t0", "t1", "t2", "t3"};
  types[1].name = "middle";
  types[1].labels = {"m0", "m1", "m2", "m3", "m4"};
  types[2].name = "bottom";
  types[2].labels = {"b0", "b1"};
  return ComponentSchema("toy", "mixed_radix", std::move(types), 0xE000);
}

// 2 types x (3,4) = 12 characters; enough structure for split/eval tests
// while keeping model passes cheap.
inline ComponentSchema mini_schema() {
  std::vector<ComponentType> types(2);
  types[0].name = "left";
  types[0].labels = {"l0", "l1", "l2"};
  types[1].name = "right";
  types[1].labels = {"r0", "r1", "r2", "r3"};
  return ComponentSchema("mini", "mixed_radix", std::move(types), 0xE800);
}

// Deterministic glyph: each component type owns a horizontal band and draws
// a bar whose position encodes the label; the font controls stroke width,
// ink darkness and a corner marker, so both content and style are learnable.
inline ImageU8 render_glyph(const ComponentSchema& sc, const CharLabels& lab, int font,
                            int64_t size) {
  ImageU8 img;
  img.height = size;
  img.width = size;
  img.pixels.assign(size_t(size * size), 255);
  uint8_t ink = uint8_t(10 + (font % 6) * 25);
  int64_t thick = 2 + font % 3;
  int64_t band = size / sc.num_types();
  auto put = [&](int64_t y, int64_t x) {
    if (y >= 0 && y < size && x >= 0 && x < size) img.at(y, x) = ink;
  };
  for (int t = 0; t < sc.num_types(); ++t) {
    if (sc.is_null(t, lab[size_t(t)])) continue;
    int64_t n = int64_t(sc.type(t).labels.size());
    int64_t l = lab[size_t(t)];
    int64_t y0 = t * band + 1;
    int64_t y1 = (t + 1) * band - 2;
    int64_t x0 = 2 + (l * (size - 6 - thick)) / std::max<int64_t>(1, n - 1);
    for (int64_t y = y0; y <= y1; ++y)
      for (int64_t w = 0; w < thick; ++w) put(y, x0 + w);
    // A short tick off the bar disambiguates labels that land on nearby
    // columns after resizing.
    int64_t ty = y0 + (l % 3) + 1;
    for (int64_t x = x0 + thick; x < x0 + thick + 4 + 2 * (l % 2); ++x) put(ty, x);
  }
  int64_t m = 2 + font % 4;
  for (int64_t y = 0; y < m; ++y)
    for (int64_t x = 0; x < m; ++x) put(1 + y, size - 2 - m + x);
  return img;
}

inline void write_corpus(const std::string& root, const ComponentSchema& sc, int n_fonts,
                         int64_t size, const std::vector<CharLabels>& chars) {
  namespace fs = std::filesystem;
  for (int f = 0; f < n_fonts; ++f) {
    fs::path dir = fs::path(root) / ("font" + std::to_string(f));
    fs::create_directories(dir);
    for (const auto& lab : chars) {
      std::string key = char_key(sc.compose(lab));
      write_png_gray(render_glyph(sc, lab, f, size), (dir / (key + ".png")).string());
    }
  }
}

inline void write_corpus(const std::string& root, const ComponentSchema& sc, int n_fonts,
                         int64_t size) {
  write_corpus(root, sc, n_fonts, size, sc.all_characters());
}

// ---------------------------------------------------------------------------
// Gradient checking (double precision)
// ---------------------------------------------------------------------------

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;  // "<param>[<idx>]"
  int probes = 0;     // probes that produced a trusted comparison
  int skipped = 0;    // probes rejected as kink-contaminated
};

// Nudge every parameter off its initial value. Zero-initialised biases and
// norm shifts can park activations exactly on a relu kink, where central
// differences and the analytic gradient legitimately disagree.
template <typename S>
void jitter_params(const ParamRefs<S>& params, Rng& rng, double scale = 0.05) {
  NoGradGuard ng;
  for (const auto& [name, p] : params) {
    TensorT<S>& v = p->value();
    for (int64_t i = 0; i < v.numel(); ++i) v[i] += S(scale * rng.normal());
  }
}

// Central differences against the analytic gradient on `probes_per_param`
// random elements of each parameter. fn() must rebuild the whole loss graph
// from the current parameter values (and is called with gradients disabled
// during the difference evaluations).
//
// Relu-style kinks make single finite differences untrustworthy: a kink
// inside the probing interval biases the estimate by O(eps). Cross-checking
// the difference at eps against eps/2 separates the two cases — a backward
// bug leaves both estimates agreeing with each other while disagreeing with
// the analytic value, whereas a kink makes the two estimates disagree by the
// same order as the discrepancy. Probes of the second kind are skipped.
// Everything runs in double precision, so eps can sit at 1e-6 (roundoff in
// the difference is ~1e-10) where both kink crossings and the very high
// curvature of tiny normalisation layers become negligible.
template <typename Fn>
GradCheckResult check_gradients(const ParamRefs<double>& params, Fn&& fn, Rng& rng,
                                int probes_per_param = 2, double eps = 1e-6) {
  VarT<double> loss = fn();
  loss.backward();
  std::vector<TensorT<double>> analytic;
  analytic.reserve(params.size());
  for (auto& [name, p] : params)
    analytic.push_back(p->has_grad() ? p->grad().clone()
                                     : TensorT<double>(p->shape()));
  zero_grads(params);

  GradCheckResult res;
  NoGradGuard ng;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& [name, p] = params[pi];
    for (int k = 0; k < probes_per_param; ++k) {
      int64_t idx = rng.uniform_int(p->numel());
      double* w = p->value().data() + idx;
      double orig = *w;
      auto fd_at = [&](double e) {
        *w = orig + e;
        double up = fn().value()[0];
        *w = orig - e;
        double down = fn().value()[0];
        *w = orig;
        return (up - down) / (2.0 * e);
      };
      double an = analytic[pi][idx];
      auto rel_to = [&](double fd) {
        return std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      };
      double fd_full = fd_at(eps);
      double rel = rel_to(fd_full);
      if (rel > 1e-3) {
        double fd_half = fd_at(eps / 2.0);
        double rel_half = rel_to(fd_half);
        if (rel_half > 1e-3 &&
            std::abs(fd_full - fd_half) >= 0.5 * std::abs(fd_half - an)) {
          ++res.skipped;  // estimates disagree with each other: kink, not a bug
          continue;
        }
        rel = rel_half;
      }
      ++res.probes;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = name + "[" + std::to_string(idx) + "]";
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Process helpers
// ---------------------------------------------------------------------------

struct CmdResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

inline CmdResult run_cmd(const std::string& cmd) {
  CmdResult r;
  FILE* pipe = ::popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  size_t n;
  while ((n = ::fread(buf, 1, sizeof(buf), pipe)) > 0) r.output.append(buf, n);
  int status = ::pclose(pipe);
  r.exit_code = (status >= 0 && WIFEXITED(status)) ? WEXITSTATUS(status) : -1;
  return r;
}

template <typename Fn>
std::optional<ErrorCode> error_code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

inline std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(f),
                              std::istreambuf_iterator<char>());
}

}  // namespace tu
