#pragma once

#include <map>

#include "dmfont/blocks.hpp"

namespace dmfont {

enum class WritePolicy { Average, Overwrite };

// Key-value store for encoded component features, keyed by (component id,
// style slot). Writes during encoding keep the autodiff graph alive, so a
// later read feeds gradients back into the encoder. One instance holds all
// feature levels; shapes are only constrained to be consistent per level.
template <typename S>
class DynamicMemoryT {
 public:
  DynamicMemoryT() = default;
  DynamicMemoryT(int num_levels, WritePolicy policy) : policy_(policy) {
    levels_.resize(size_t(num_levels));
  }

  int num_levels() const { return int(levels_.size()); }
  WritePolicy policy() const { return policy_; }

  void write(int level, int64_t comp, int64_t slot, const VarT<S>& feat) {
    auto& m = level_at(level);
    auto key = std::make_pair(comp, slot);
    auto it = m.find(key);
    if (it == m.end()) {
      m.emplace(key, Entry{feat, 1});
      return;
    }
    DMFONT_CHECK(it->second.sum.shape() == feat.shape(), ErrorCode::ShapeMismatch,
                 "memory write shape changed for component " + std::to_string(comp));
    if (policy_ == WritePolicy::Overwrite) {
      it->second = Entry{feat, 1};
    } else {
      it->second.sum = add(it->second.sum, feat);
      it->second.count += 1;
    }
  }

  bool has(int level, int64_t comp, int64_t slot) const {
    const auto& m = level_at(level);
    return m.count(std::make_pair(comp, slot)) > 0;
  }

  int64_t count(int level, int64_t comp, int64_t slot) const {
    const auto& m = level_at(level);
    auto it = m.find(std::make_pair(comp, slot));
    return it == m.end() ? 0 : it->second.count;
  }

  VarT<S> read(int level, int64_t comp, int64_t slot) const {
    const auto& m = level_at(level);
    auto it = m.find(std::make_pair(comp, slot));
    if (it == m.end())
      raise(ErrorCode::MissingComponent, "no stored feature for component " +
                                             std::to_string(comp) + " style slot " +
                                             std::to_string(slot));
    const Entry& e = it->second;
    if (e.count == 1) return e.sum;
    return mul_scalar(e.sum, S(1.0 / double(e.count)));
  }

  void erase_style(int64_t slot) {
    for (auto& m : levels_)
      for (auto it = m.begin(); it != m.end();)
        it = (it->first.second == slot) ? m.erase(it) : std::next(it);
  }

  void reset() {
    for (auto& m : levels_) m.clear();
  }

  int64_t size(int level) const { return int64_t(level_at(level).size()); }

 private:
  struct Entry {
    VarT<S> sum;
    int64_t count = 0;
  };
  using LevelMap = std::map<std::pair<int64_t, int64_t>, Entry>;

  LevelMap& level_at(int level) {
    DMFONT_CHECK(level >= 0 && level < num_levels(), ErrorCode::InvalidArgument,
                 "memory level " + std::to_string(level));
    return levels_[size_t(level)];
  }
  const LevelMap& level_at(int level) const {
    DMFONT_CHECK(level >= 0 && level < num_levels(), ErrorCode::InvalidArgument,
                 "memory level " + std::to_string(level));
    return levels_[size_t(level)];
  }

  WritePolicy policy_ = WritePolicy::Average;
  std::vector<LevelMap> levels_;
};

// Learned per-component embeddings carrying the style-independent shape of
// each component, spatially arranged and refined by a small conv stack at
// read time (so the refiner trains through every lookup).
template <typename S>
struct PersistentMemoryT {
  EmbeddingT<S> table;
  std::vector<ConvBlockT<S>> refiner;
  int64_t channels = 0;
  int64_t res = 0;

  PersistentMemoryT() = default;
  PersistentMemoryT(int64_t n_components, int64_t channels_, int64_t res_, Rng& rng)
      : table(n_components, channels_ * res_ * res_, rng), channels(channels_), res(res_) {
    for (int i = 0; i < 3; ++i) refiner.emplace_back(channels_, channels_, 3, 1, rng);
  }

  bool defined() const { return table.table.defined(); }

  // ids -> [n, channels, res, res]
  VarT<S> read(const std::vector<int64_t>& ids) const {
    VarT<S> h = reshape(table.forward(ids), Shape{int64_t(ids.size()), channels, res, res});
    for (const auto& b : refiner) h = b.forward(h);
    return h;
  }

  void params(const std::string& p, ParamRefs<S>& out) {
    table.params(p + ".table", out);
    for (size_t i = 0; i < refiner.size(); ++i)
      refiner[i].params(p + ".refine" + std::to_string(i), out);
  }
};

}  // namespace dmfont
