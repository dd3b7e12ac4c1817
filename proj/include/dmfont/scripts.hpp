#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmfont/common.hpp"

namespace dmfont {

// ---------------------------------------------------------------------------
// UTF-8
// ---------------------------------------------------------------------------

inline std::string utf8_encode(uint32_t cp) {
  std::string s;
  if (cp < 0x80) {
    s += char(cp);
  } else if (cp < 0x800) {
    s += char(0xC0 | (cp >> 6));
    s += char(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    s += char(0xE0 | (cp >> 12));
    s += char(0x80 | ((cp >> 6) & 0x3F));
    s += char(0x80 | (cp & 0x3F));
  } else {
    s += char(0xF0 | (cp >> 18));
    s += char(0x80 | ((cp >> 12) & 0x3F));
    s += char(0x80 | ((cp >> 6) & 0x3F));
    s += char(0x80 | (cp & 0x3F));
  }
  return s;
}

inline std::vector<uint32_t> utf8_decode(const std::string& s) {
  std::vector<uint32_t> out;
  size_t i = 0;
  while (i < s.size()) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    uint32_t cp = 0;
    int extra = 0;
    if (c < 0x80) {
      cp = c;
    } else if ((c >> 5) == 0x6) {
      cp = c & 0x1F;
      extra = 1;
    } else if ((c >> 4) == 0xE) {
      cp = c & 0x0F;
      extra = 2;
    } else if ((c >> 3) == 0x1E) {
      cp = c & 0x07;
      extra = 3;
    } else {
      raise(ErrorCode::InvalidArgument, "invalid utf-8 byte at offset " + std::to_string(i));
    }
    DMFONT_CHECK(i + size_t(extra) < s.size(), ErrorCode::InvalidArgument,
                 "truncated utf-8 sequence");
    for (int k = 1; k <= extra; ++k) {
      unsigned char cc = static_cast<unsigned char>(s[i + size_t(k)]);
      DMFONT_CHECK((cc >> 6) == 0x2, ErrorCode::InvalidArgument, "invalid utf-8 continuation");
      cp = (cp << 6) | (cc & 0x3F);
    }
    out.push_back(cp);
    i += size_t(extra) + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Component schema
// ---------------------------------------------------------------------------

// One label per component type; index 0 means "absent" for types that allow
// null.
using CharLabels = std::vector<int>;

struct ComponentType {
  std::string name;
  std::vector<std::string> labels;
  bool allows_null = false;
  // For cluster_table schemas: the codepoint each non-null label maps to
  // (0 for the null slot). Empty for positional (mixed_radix) schemas.
  std::vector<uint32_t> codepoints;
};

// Describes how characters of a script decompose into sub-glyph components.
//
// Two decomposition rules:
//   mixed_radix   - a contiguous codepoint block enumerates the full product
//                   of component labels positionally (code = cp - base, then
//                   repeated div/mod by the later types' label counts).
//   cluster_table - a character is a cluster of codepoints, each mapping to
//                   one (type, label); types missing from the cluster take
//                   the null label.
class ComponentSchema {
 public:
  ComponentSchema() = default;
  ComponentSchema(std::string id, std::string rule, std::vector<ComponentType> types,
                  uint32_t base = 0)
      : id_(std::move(id)), rule_(std::move(rule)), types_(std::move(types)), base_(base) {
    DMFONT_CHECK(rule_ == "mixed_radix" || rule_ == "cluster_table", ErrorCode::InvalidArgument,
                 "unknown schema rule: " + rule_);
    DMFONT_CHECK(!types_.empty(), ErrorCode::InvalidArgument, "schema has no component types");
    offsets_.resize(types_.size() + 1, 0);
    for (size_t t = 0; t < types_.size(); ++t) {
      DMFONT_CHECK(!types_[t].labels.empty(), ErrorCode::InvalidArgument,
                   "component type with no labels: " + types_[t].name);
      offsets_[t + 1] = offsets_[t] + int64_t(types_[t].labels.size());
    }
    if (rule_ == "cluster_table") {
      for (size_t t = 0; t < types_.size(); ++t) {
        const auto& ty = types_[t];
        DMFONT_CHECK(ty.codepoints.size() == ty.labels.size(), ErrorCode::InvalidArgument,
                     "cluster_table type " + ty.name + " missing codepoint column");
        for (size_t l = 0; l < ty.codepoints.size(); ++l) {
          if (ty.allows_null && l == 0) continue;
          uint32_t cp = ty.codepoints[l];
          DMFONT_CHECK(cp != 0, ErrorCode::InvalidArgument,
                       "cluster_table label without codepoint: " + ty.labels[l]);
          DMFONT_CHECK(!cp_map_.count(cp), ErrorCode::InvalidArgument,
                       "codepoint mapped twice in cluster_table");
          cp_map_[cp] = {int(t), int(l)};
        }
      }
    }
  }

  const std::string& id() const { return id_; }
  const std::string& rule() const { return rule_; }
  int num_types() const { return int(types_.size()); }
  const ComponentType& type(int t) const { return types_[size_t(t)]; }
  uint32_t base() const { return base_; }

  // Contiguous numbering of every (type, label) slot across the schema.
  int64_t total_components() const { return offsets_.back(); }
  int64_t global_id(int t, int label) const {
    DMFONT_CHECK(t >= 0 && t < num_types() && label >= 0 &&
                     label < int(types_[size_t(t)].labels.size()),
                 ErrorCode::LabelOutOfRange,
                 "component (" + std::to_string(t) + "," + std::to_string(label) + ")");
    return offsets_[size_t(t)] + label;
  }

  bool is_null(int t, int label) const { return types_[size_t(t)].allows_null && label == 0; }

  const std::string& label_name(int t, int label) const {
    DMFONT_CHECK(t >= 0 && t < num_types() && label >= 0 &&
                     label < int(types_[size_t(t)].labels.size()),
                 ErrorCode::LabelOutOfRange, "label_name out of range");
    return types_[size_t(t)].labels[size_t(label)];
  }

  // Decomposes one character, given as its codepoint cluster.
  CharLabels decompose(const std::vector<uint32_t>& cluster) const {
    if (rule_ == "mixed_radix") {
      DMFONT_CHECK(cluster.size() == 1, ErrorCode::MalformedCluster,
                   "positional script character must be a single codepoint");
      return decompose_cp(cluster[0]);
    }
    CharLabels labels(size_t(num_types()), -1);
    for (uint32_t cp : cluster) {
      auto it = cp_map_.find(cp);
      DMFONT_CHECK(it != cp_map_.end(), ErrorCode::CharacterOutOfRange,
                   "codepoint " + cp_hex(cp) + " not in schema " + id_);
      auto [t, l] = it->second;
      DMFONT_CHECK(labels[size_t(t)] == -1, ErrorCode::MalformedCluster,
                   "two components of type " + types_[size_t(t)].name + " in one cluster");
      labels[size_t(t)] = l;
    }
    for (int t = 0; t < num_types(); ++t) {
      if (labels[size_t(t)] == -1) {
        DMFONT_CHECK(types_[size_t(t)].allows_null, ErrorCode::MalformedCluster,
                     "cluster missing required component type " + types_[size_t(t)].name);
        labels[size_t(t)] = 0;
      }
    }
    return labels;
  }

  CharLabels decompose_cp(uint32_t cp) const {
    if (rule_ == "cluster_table") return decompose({cp});
    uint32_t count = 1;
    for (const auto& ty : types_) count *= uint32_t(ty.labels.size());
    DMFONT_CHECK(cp >= base_ && cp < base_ + count, ErrorCode::CharacterOutOfRange,
                 "codepoint " + cp_hex(cp) + " outside block of schema " + id_);
    uint32_t code = cp - base_;
    CharLabels labels(static_cast<size_t>(num_types()));
    for (int t = num_types() - 1; t >= 0; --t) {
      uint32_t r = uint32_t(types_[size_t(t)].labels.size());
      labels[size_t(t)] = int(code % r);
      code /= r;
    }
    return labels;
  }

  // Inverse of decompose: canonical codepoint cluster for a label tuple.
  std::vector<uint32_t> compose(const CharLabels& labels) const {
    DMFONT_CHECK(labels.size() == size_t(num_types()), ErrorCode::LabelOutOfRange,
                 "compose: expected " + std::to_string(num_types()) + " labels");
    for (int t = 0; t < num_types(); ++t)
      DMFONT_CHECK(labels[size_t(t)] >= 0 &&
                       labels[size_t(t)] < int(types_[size_t(t)].labels.size()),
                   ErrorCode::LabelOutOfRange,
                   "label " + std::to_string(labels[size_t(t)]) + " out of range for type " +
                       types_[size_t(t)].name);
    if (rule_ == "mixed_radix") {
      uint32_t code = 0;
      for (int t = 0; t < num_types(); ++t)
        code = code * uint32_t(types_[size_t(t)].labels.size()) + uint32_t(labels[size_t(t)]);
      return {base_ + code};
    }
    std::vector<uint32_t> out;
    for (int t = 0; t < num_types(); ++t) {
      if (is_null(t, labels[size_t(t)])) continue;
      out.push_back(types_[size_t(t)].codepoints[size_t(labels[size_t(t)])]);
    }
    return out;
  }

  // Every character the schema can express (the full label product).
  std::vector<CharLabels> all_characters() const {
    int64_t count = 1;
    for (const auto& ty : types_) count *= int64_t(ty.labels.size());
    std::vector<CharLabels> out;
    out.reserve(size_t(count));
    CharLabels cur(size_t(num_types()), 0);
    for (int64_t i = 0; i < count; ++i) {
      out.push_back(cur);
      for (int t = num_types() - 1; t >= 0; --t) {
        if (++cur[size_t(t)] < int(types_[size_t(t)].labels.size())) break;
        cur[size_t(t)] = 0;
      }
    }
    return out;
  }

  // Splits decoded text into per-character codepoint clusters. For cluster
  // schemas, a cluster is a base (first-type) codepoint plus the combining
  // codepoints that follow it.
  std::vector<std::vector<uint32_t>> cluster_text(const std::vector<uint32_t>& cps) const {
    std::vector<std::vector<uint32_t>> out;
    if (rule_ == "mixed_radix") {
      for (uint32_t cp : cps) out.push_back({cp});
      return out;
    }
    for (uint32_t cp : cps) {
      auto it = cp_map_.find(cp);
      DMFONT_CHECK(it != cp_map_.end(), ErrorCode::CharacterOutOfRange,
                   "codepoint " + cp_hex(cp) + " not in schema " + id_);
      if (it->second.first == 0) {
        out.push_back({cp});
      } else {
        DMFONT_CHECK(!out.empty(), ErrorCode::MalformedCluster,
                     "combining mark " + cp_hex(cp) + " with no base character");
        out.back().push_back(cp);
      }
    }
    return out;
  }

  static std::string cp_hex(uint32_t cp) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "U+%04X", cp);
    return buf;
  }

 private:
  std::string id_;
  std::string rule_;
  std::vector<ComponentType> types_;
  uint32_t base_ = 0;
  std::vector<int64_t> offsets_;
  std::map<uint32_t, std::pair<int, int>> cp_map_;
};

// ---------------------------------------------------------------------------
// Coverage
// ---------------------------------------------------------------------------

struct Coverage {
  std::vector<std::vector<bool>> covered;  // [type][label], null slots ignored
  int64_t needed = 0;
  int64_t have = 0;

  explicit Coverage(const ComponentSchema& schema) {
    covered.resize(size_t(schema.num_types()));
    for (int t = 0; t < schema.num_types(); ++t) {
      covered[size_t(t)].assign(schema.type(t).labels.size(), false);
      needed += int64_t(schema.type(t).labels.size()) - (schema.type(t).allows_null ? 1 : 0);
    }
  }

  // Returns how many previously uncovered non-null labels `ch` adds.
  int64_t gain(const ComponentSchema& schema, const CharLabels& ch) const {
    int64_t g = 0;
    for (int t = 0; t < schema.num_types(); ++t)
      if (!schema.is_null(t, ch[size_t(t)]) && !covered[size_t(t)][size_t(ch[size_t(t)])]) ++g;
    return g;
  }

  void add(const ComponentSchema& schema, const CharLabels& ch) {
    for (int t = 0; t < schema.num_types(); ++t) {
      if (schema.is_null(t, ch[size_t(t)])) continue;
      if (!covered[size_t(t)][size_t(ch[size_t(t)])]) {
        covered[size_t(t)][size_t(ch[size_t(t)])] = true;
        ++have;
      }
    }
  }

  bool complete() const { return have == needed; }

  std::vector<std::pair<int, int>> missing(const ComponentSchema& schema) const {
    std::vector<std::pair<int, int>> out;
    for (int t = 0; t < schema.num_types(); ++t)
      for (size_t l = 0; l < covered[size_t(t)].size(); ++l)
        if (!covered[size_t(t)][l] && !schema.is_null(t, int(l))) out.emplace_back(t, int(l));
    return out;
  }
};

inline Coverage compute_coverage(const ComponentSchema& schema,
                                 const std::vector<CharLabels>& chars) {
  Coverage cov(schema);
  for (const auto& ch : chars) cov.add(schema, ch);
  return cov;
}

inline bool covers_all_components(const ComponentSchema& schema,
                                  const std::vector<CharLabels>& chars) {
  return compute_coverage(schema, chars).complete();
}

// Greedy set cover: repeatedly takes the pool character covering the most
// still-uncovered non-null labels (first index wins ties). Raises
// CoverageImpossible when the pool cannot complete the cover.
inline std::vector<size_t> minimal_reference_set(const ComponentSchema& schema,
                                                 const std::vector<CharLabels>& pool) {
  Coverage cov(schema);
  std::vector<size_t> picked;
  std::vector<bool> used(pool.size(), false);
  while (!cov.complete()) {
    int64_t best_gain = 0;
    size_t best = pool.size();
    for (size_t i = 0; i < pool.size(); ++i) {
      if (used[i]) continue;
      int64_t g = cov.gain(schema, pool[i]);
      if (g > best_gain) {
        best_gain = g;
        best = i;
      }
    }
    if (best == pool.size()) {
      auto miss = cov.missing(schema);
      std::string desc;
      for (size_t k = 0; k < miss.size() && k < 8; ++k) {
        if (k) desc += ", ";
        desc += schema.type(miss[k].first).name + ":" +
                schema.label_name(miss[k].first, miss[k].second);
      }
      if (miss.size() > 8) desc += ", ...";
      raise(ErrorCode::CoverageImpossible,
            "pool cannot cover " + std::to_string(miss.size()) + " components (" + desc + ")");
    }
    used[best] = true;
    cov.add(schema, pool[best]);
    picked.push_back(best);
  }
  return picked;
}

// ---------------------------------------------------------------------------
// Built-in schemas
// ---------------------------------------------------------------------------

// Hangul syllables: U+AC00 + (initial*21 + medial)*28 + final.
inline ComponentSchema korean_schema() {
  static const char* kInitials[] = {"ㄱ", "ㄲ", "ㄴ", "ㄷ", "ㄸ", "ㄹ", "ㅁ", "ㅂ", "ㅃ", "ㅅ",
                                    "ㅆ", "ㅇ", "ㅈ", "ㅉ", "ㅊ", "ㅋ", "ㅌ", "ㅍ", "ㅎ"};
  static const char* kMedials[] = {"ㅏ", "ㅐ", "ㅑ", "ㅒ", "ㅓ", "ㅔ", "ㅕ", "ㅖ", "ㅗ", "ㅘ", "ㅙ",
                                   "ㅚ", "ㅛ", "ㅜ", "ㅝ", "ㅞ", "ㅟ", "ㅠ", "ㅡ", "ㅢ", "ㅣ"};
  static const char* kFinals[] = {"(none)", "ㄱ", "ㄲ", "ㄳ", "ㄴ", "ㄵ", "ㄶ", "ㄷ", "ㄹ", "ㄺ",
                                  "ㄻ", "ㄼ", "ㄽ", "ㄾ", "ㄿ", "ㅀ", "ㅁ", "ㅂ", "ㅄ", "ㅅ",
                                  "ㅆ", "ㅇ", "ㅈ", "ㅊ", "ㅋ", "ㅌ", "ㅍ", "ㅎ"};
  std::vector<ComponentType> types(3);
  types[0].name = "initial";
  types[0].labels.assign(std::begin(kInitials), std::end(kInitials));
  types[1].name = "medial";
  types[1].labels.assign(std::begin(kMedials), std::end(kMedials));
  types[2].name = "final";
  types[2].labels.assign(std::begin(kFinals), std::end(kFinals));
  // The empty final is a real visual state every font must demonstrate, so
  // it is modeled as an ordinary label rather than a null slot.
  for (auto& t : types) t.allows_null = false;
  return ComponentSchema("korean", "mixed_radix", std::move(types), 0xAC00);
}

// Thai clusters: base consonant plus optional upper vowel, upper diacritic
// and lower vowel. The assignment of codepoints to the four slots follows
// common Thai rendering structure; ฤ/ฦ are excluded (they do not combine)
// and SARA AM is treated as an upper diacritic.
inline ComponentSchema thai_schema() {
  auto make_type = [](std::string name, bool allows_null,
                      const std::vector<uint32_t>& cps) {
    ComponentType t;
    t.name = std::move(name);
    t.allows_null = allows_null;
    if (allows_null) {
      t.labels.push_back("(none)");
      t.codepoints.push_back(0);
    }
    for (uint32_t cp : cps) {
      t.labels.push_back(utf8_encode(cp));
      t.codepoints.push_back(cp);
    }
    return t;
  };
  std::vector<uint32_t> consonants;
  for (uint32_t cp = 0x0E01; cp <= 0x0E2E; ++cp) {
    if (cp == 0x0E24 || cp == 0x0E26) continue;
    consonants.push_back(cp);
  }
  std::vector<ComponentType> types;
  types.push_back(make_type("consonant", false, consonants));
  types.push_back(make_type("upper_vowel", true,
                            {0x0E31, 0x0E34, 0x0E35, 0x0E36, 0x0E37, 0x0E47}));
  types.push_back(make_type("upper_mark", true,
                            {0x0E48, 0x0E49, 0x0E4A, 0x0E4B, 0x0E4C, 0x0E4D, 0x0E4E, 0x0E33}));
  types.push_back(make_type("lower_vowel", true, {0x0E38, 0x0E39, 0x0E3A}));
  return ComponentSchema("thai", "cluster_table", std::move(types));
}

inline ComponentSchema builtin_schema(const std::string& name) {
  if (name == "korean") return korean_schema();
  if (name == "thai") return thai_schema();
  raise(ErrorCode::InvalidArgument, "unknown built-in schema: " + name);
}

// ---------------------------------------------------------------------------
// Schema (de)serialization
// ---------------------------------------------------------------------------

inline nlohmann::json schema_to_json(const ComponentSchema& schema) {
  nlohmann::json j;
  j["id"] = schema.id();
  j["rule"] = schema.rule();
  if (schema.rule() == "mixed_radix") j["base"] = schema.base();
  j["types"] = nlohmann::json::array();
  for (int t = 0; t < schema.num_types(); ++t) {
    const auto& ty = schema.type(t);
    nlohmann::json jt;
    jt["name"] = ty.name;
    jt["allows_null"] = ty.allows_null;
    jt["labels"] = ty.labels;
    if (!ty.codepoints.empty()) jt["codepoints"] = ty.codepoints;
    j["types"].push_back(std::move(jt));
  }
  return j;
}

inline ComponentSchema schema_from_json(const nlohmann::json& j) {
  std::vector<ComponentType> types;
  for (const auto& jt : j.at("types")) {
    ComponentType ty;
    ty.name = jt.at("name").get<std::string>();
    ty.allows_null = jt.at("allows_null").get<bool>();
    ty.labels = jt.at("labels").get<std::vector<std::string>>();
    if (jt.contains("codepoints")) ty.codepoints = jt.at("codepoints").get<std::vector<uint32_t>>();
    types.push_back(std::move(ty));
  }
  return ComponentSchema(j.at("id").get<std::string>(), j.at("rule").get<std::string>(),
                         std::move(types), j.value("base", 0u));
}

inline void save_schema(const ComponentSchema& schema, const std::string& path) {
  std::ofstream f(path);
  DMFONT_CHECK(f.good(), ErrorCode::IoError, "cannot write " + path);
  f << schema_to_json(schema).dump(2) << "\n";
}

inline ComponentSchema load_schema(const std::string& path) {
  std::ifstream f(path);
  DMFONT_CHECK(f.good(), ErrorCode::IoError, "cannot read " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    raise(ErrorCode::IoError, "bad schema json in " + path + ": " + e.what());
  }
  return schema_from_json(j);
}

// Resolves either a built-in name or a path to a schema json file.
inline ComponentSchema resolve_schema(const std::string& name_or_path) {
  if (name_or_path == "korean" || name_or_path == "thai") return builtin_schema(name_or_path);
  return load_schema(name_or_path);
}

}  // namespace dmfont
