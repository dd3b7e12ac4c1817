#pragma once

#include "dmfont/memory.hpp"
#include "dmfont/scripts.hpp"

namespace dmfont {

struct ModelConfig {
  int64_t image_size = 64;
  int64_t base_channels = 32;
  int64_t enc_cap = 256;     // channel ceilings per network
  int64_t dec_cap = 512;
  int64_t disc_cap = 1024;
  int64_t clf_cap = 256;
  int64_t high_res = 16;     // spatial size of the component feature level
  // Ablation switches.
  bool compositional_generator = true;  // attention/context/hourglass blocks
  bool dynamic_memory = true;           // off: decode from persistent features only
  bool persistent_memory = true;
  WritePolicy write_policy = WritePolicy::Average;

  void validate() const {
    auto pow2 = [](int64_t v) { return v >= 2 && (v & (v - 1)) == 0; };
    DMFONT_CHECK(pow2(image_size) && pow2(high_res) && image_size >= high_res,
                 ErrorCode::InvalidArgument, "image_size/high_res must be powers of two");
    DMFONT_CHECK(base_channels >= 1, ErrorCode::InvalidArgument, "base_channels < 1");
    DMFONT_CHECK(dynamic_memory || persistent_memory, ErrorCode::InvalidArgument,
                 "at least one of dynamic_memory/persistent_memory must be enabled");
  }

  // Channels at spatial resolution r: doubles at each downsampling, capped.
  int64_t ch(int64_t r, int64_t cap) const {
    return std::min(cap, base_channels * (image_size / r));
  }
  // The skip level only exists when the dynamic memory can feed it.
  bool has_mid_level() const { return dynamic_memory && image_size >= high_res * 4; }
  int num_levels() const { return has_mid_level() ? 2 : 1; }
};

// ---------------------------------------------------------------------------
// Encoder: shared trunk, one head per component type
// ---------------------------------------------------------------------------

template <typename S>
struct EncodedFeatures {
  // Per component type, batched over the reference images.
  std::vector<VarT<S>> high;  // [R, C_hi, hr, hr]
  std::vector<VarT<S>> mid;   // [R, C_mid, 2*hr, 2*hr]; empty when single-level
};

template <typename S>
struct EncoderT {
  ModelConfig cfg;
  int n_types = 0;
  ConvBlockT<S> stem;
  std::vector<ConvBlockT<S>> downs;
  GCBlockT<S> gc;
  SABlockT<S> sa;
  ResBlockT<S> trunk_res;
  std::vector<ResBlockT<S>> head_high;
  std::vector<Conv2dT<S>> head_mid;
  int mid_tap = -1;  // index into downs whose output is the mid-level map

  EncoderT() = default;
  EncoderT(const ModelConfig& cfg_, int n_types_, Rng& rng) : cfg(cfg_), n_types(n_types_) {
    int64_t S_ = cfg.image_size, hr = cfg.high_res;
    stem = ConvBlockT<S>(1, cfg.ch(S_, cfg.enc_cap), 3, 1, rng);
    int idx = 0;
    for (int64_t r = S_; r > hr; r /= 2, ++idx) {
      downs.emplace_back(cfg.ch(r, cfg.enc_cap), cfg.ch(r / 2, cfg.enc_cap), 3, 2, rng);
      if (r / 2 == hr * 2) mid_tap = idx;
    }
    int64_t chi = cfg.ch(hr, cfg.enc_cap);
    if (cfg.compositional_generator) {
      gc = GCBlockT<S>(chi, rng);
      sa = SABlockT<S>(chi, hr, hr, rng);
    }
    trunk_res = ResBlockT<S>(chi, chi, 1, rng);
    for (int t = 0; t < n_types; ++t) {
      head_high.emplace_back(chi, chi, 1, rng);
      if (cfg.has_mid_level())
        head_mid.emplace_back(cfg.ch(hr * 2, cfg.enc_cap), cfg.ch(hr * 2, cfg.enc_cap), 1, 1, 0,
                              rng);
    }
  }

  int64_t high_channels() const { return cfg.ch(cfg.high_res, cfg.enc_cap); }
  int64_t mid_channels() const { return cfg.ch(cfg.high_res * 2, cfg.enc_cap); }

  EncodedFeatures<S> forward(const VarT<S>& x) const {
    const Shape& s = x.shape();
    DMFONT_CHECK(s.size() == 4 && s[1] == 1 && s[2] == cfg.image_size && s[3] == cfg.image_size,
                 ErrorCode::ShapeMismatch, "encoder expects [R,1,S,S], got " + shape_str(s));
    VarT<S> h = stem.forward(x);
    VarT<S> mid_map;
    for (size_t i = 0; i < downs.size(); ++i) {
      h = downs[i].forward(h);
      if (int(i) == mid_tap) mid_map = h;
    }
    if (cfg.compositional_generator) {
      h = gc.forward(h);
      h = sa.forward(h);
    }
    h = trunk_res.forward(h);
    EncodedFeatures<S> out;
    for (int t = 0; t < n_types; ++t) {
      out.high.push_back(head_high[size_t(t)].forward(h));
      if (cfg.has_mid_level()) out.mid.push_back(head_mid[size_t(t)].forward(mid_map));
    }
    return out;
  }

  void params(const std::string& p, ParamRefs<S>& out) {
    stem.params(p + ".stem", out);
    for (size_t i = 0; i < downs.size(); ++i)
      downs[i].params(p + ".down" + std::to_string(i), out);
    if (cfg.compositional_generator) {
      gc.params(p + ".gc", out);
      sa.params(p + ".sa", out);
    }
    trunk_res.params(p + ".res", out);
    for (int t = 0; t < n_types; ++t) {
      head_high[size_t(t)].params(p + ".head" + std::to_string(t), out);
      if (cfg.has_mid_level())
        head_mid[size_t(t)].params(p + ".head_mid" + std::to_string(t), out);
    }
  }
};

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

template <typename S>
struct DecoderT {
  ModelConfig cfg;
  int n_types = 0;
  Conv2dT<S> fuse;
  SABlockT<S> sa;
  HGBlockT<S> hg;
  ResBlockT<S> res_a, res_b;
  std::vector<ConvBlockT<S>> ups;
  Conv2dT<S> to_img;
  int mid_join = -1;  // index of the up stage that consumes the mid features

  DecoderT() = default;
  DecoderT(const ModelConfig& cfg_, int n_types_, int64_t enc_high_ch, int64_t enc_mid_ch,
           Rng& rng)
      : cfg(cfg_), n_types(n_types_) {
    int64_t hr = cfg.high_res;
    int64_t dc = cfg.ch(hr, cfg.dec_cap);
    fuse = Conv2dT<S>(int64_t(n_types) * enc_high_ch, dc, 1, 1, 0, rng);
    if (cfg.compositional_generator) {
      sa = SABlockT<S>(dc, hr, hr, rng);
      hg = HGBlockT<S>(dc, hr, rng);
    }
    res_a = ResBlockT<S>(dc, dc, 1, rng);
    res_b = ResBlockT<S>(dc, dc, 1, rng);
    int idx = 0;
    for (int64_t r = hr; r < cfg.image_size; r *= 2, ++idx) {
      int64_t in_ch = cfg.ch(r, cfg.dec_cap);
      int64_t out_ch = cfg.ch(r * 2, cfg.dec_cap);
      if (cfg.has_mid_level() && r * 2 == hr * 2) {
        in_ch += int64_t(n_types) * enc_mid_ch;
        mid_join = idx;
      }
      ups.emplace_back(in_ch, out_ch, 3, 1, rng);
    }
    to_img = Conv2dT<S>(cfg.ch(cfg.image_size, cfg.dec_cap), 1, 3, 1, 1, rng);
  }

  // high: [B, n_types*C_hi, hr, hr]; mid likewise at 2*hr (undefined when
  // single-level).
  VarT<S> forward(const VarT<S>& high, const VarT<S>& mid) const {
    VarT<S> h = fuse.forward(high);
    if (cfg.compositional_generator) {
      h = sa.forward(h);
      h = hg.forward(h);
    }
    h = res_b.forward(res_a.forward(h));
    for (size_t i = 0; i < ups.size(); ++i) {
      h = upsample_nearest2(h);
      if (int(i) == mid_join) h = concat_channels<S>({h, mid});
      h = ups[i].forward(h);
    }
    return tanh_op(to_img.forward(h));
  }

  void params(const std::string& p, ParamRefs<S>& out) {
    fuse.params(p + ".fuse", out);
    if (cfg.compositional_generator) {
      sa.params(p + ".sa", out);
      hg.params(p + ".hg", out);
    }
    res_a.params(p + ".res_a", out);
    res_b.params(p + ".res_b", out);
    for (size_t i = 0; i < ups.size(); ++i) ups[i].params(p + ".up" + std::to_string(i), out);
    to_img.params(p + ".to_img", out);
  }
};

// ---------------------------------------------------------------------------
// Multitask discriminator
// ---------------------------------------------------------------------------

template <typename S>
struct DiscOutput {
  VarT<S> font_logits;            // [N, n_fonts]
  VarT<S> char_logits;            // [N, n_chars]
  std::vector<VarT<S>> features;  // intermediate maps for feature matching
};

template <typename S>
struct DiscriminatorT {
  ModelConfig cfg;
  SNConv2dT<S> stem;
  std::vector<SNResBlockT<S>> blocks;
  SNLinearT<S> font_head;
  SNLinearT<S> char_head;

  DiscriminatorT() = default;
  DiscriminatorT(const ModelConfig& cfg_, int64_t n_fonts, int64_t n_chars, Rng& rng)
      : cfg(cfg_) {
    int64_t S_ = cfg.image_size;
    stem = SNConv2dT<S>(1, cfg.ch(S_, cfg.disc_cap), 3, 1, 1, rng);
    int64_t bottom = std::min<int64_t>(4, cfg.high_res);
    for (int64_t r = S_; r > bottom; r /= 2)
      blocks.emplace_back(cfg.ch(r, cfg.disc_cap), cfg.ch(r / 2, cfg.disc_cap), true, rng);
    blocks.emplace_back(cfg.ch(bottom, cfg.disc_cap), cfg.ch(bottom, cfg.disc_cap), false, rng);
    font_head = SNLinearT<S>(cfg.ch(bottom, cfg.disc_cap), n_fonts, rng);
    char_head = SNLinearT<S>(cfg.ch(bottom, cfg.disc_cap), n_chars, rng);
  }

  DiscOutput<S> forward(const VarT<S>& x) {
    DiscOutput<S> out;
    VarT<S> h = leaky_relu(stem.forward(x), S(0.2));
    out.features.push_back(h);
    for (auto& b : blocks) {
      h = b.forward(h);
      out.features.push_back(h);
    }
    VarT<S> pooled = global_avg_pool(h);
    out.font_logits = font_head.forward(pooled);
    out.char_logits = char_head.forward(pooled);
    return out;
  }

  void params(const std::string& p, ParamRefs<S>& out) {
    stem.params(p + ".stem", out);
    for (size_t i = 0; i < blocks.size(); ++i)
      blocks[i].params(p + ".block" + std::to_string(i), out);
    font_head.params(p + ".font_head", out);
    char_head.params(p + ".char_head", out);
  }
  void buffers(const std::string& p, BufferRefs<S>& out) {
    stem.buffers(p + ".stem", out);
    for (size_t i = 0; i < blocks.size(); ++i)
      blocks[i].buffers(p + ".block" + std::to_string(i), out);
    font_head.buffers(p + ".font_head", out);
    char_head.buffers(p + ".char_head", out);
  }
};

// ---------------------------------------------------------------------------
// Component classifier
// ---------------------------------------------------------------------------

// Classifies component features (as stored in memory) into the schema's
// flat component id space; the loss masks logits to the component's type.
template <typename S>
struct ComponentClassifierT {
  ResBlockT<S> r1, r2;
  LinearT<S> head;

  ComponentClassifierT() = default;
  ComponentClassifierT(int64_t in_ch, int64_t cap, int64_t n_components, Rng& rng) {
    int64_t c1 = std::min(cap, in_ch * 2);
    int64_t c2 = std::min(cap, c1 * 2);
    r1 = ResBlockT<S>(in_ch, c1, 2, rng);
    r2 = ResBlockT<S>(c1, c2, 2, rng);
    head = LinearT<S>(c2, n_components, rng);
  }

  // feats: [n, C_hi, hr, hr] -> logits [n, n_components]
  VarT<S> forward(const VarT<S>& feats) const {
    return head.forward(global_avg_pool(r2.forward(r1.forward(feats))));
  }

  void params(const std::string& p, ParamRefs<S>& out) {
    r1.params(p + ".r1", out);
    r2.params(p + ".r2", out);
    head.params(p + ".head", out);
  }
};

// ---------------------------------------------------------------------------
// Generator = encoder + dual memory + decoder
// ---------------------------------------------------------------------------

template <typename S>
struct GeneratorT {
  ModelConfig cfg;
  ComponentSchema schema;
  EncoderT<S> enc;
  DecoderT<S> dec;
  PersistentMemoryT<S> pm;
  DynamicMemoryT<S> memory;

  GeneratorT() = default;
  GeneratorT(const ModelConfig& cfg_, const ComponentSchema& schema_, Rng& rng)
      : cfg(cfg_), schema(schema_) {
    cfg.validate();
    enc = EncoderT<S>(cfg, schema.num_types(), rng);
    dec = DecoderT<S>(cfg, schema.num_types(), enc.high_channels(), enc.mid_channels(), rng);
    if (cfg.persistent_memory)
      pm = PersistentMemoryT<S>(schema.total_components(), enc.high_channels(), cfg.high_res,
                                rng);
    memory = DynamicMemoryT<S>(cfg.num_levels(), cfg.write_policy);
  }

  // Encodes reference glyphs and files their component features into the
  // dynamic memory under the given style slots. Returns the encoded features
  // so callers can also feed them to the component classifier.
  EncodedFeatures<S> encode_write(const VarT<S>& refs, const std::vector<CharLabels>& labels,
                                  const std::vector<int64_t>& slots) {
    int64_t R = refs.shape()[0];
    DMFONT_CHECK(int64_t(labels.size()) == R && int64_t(slots.size()) == R,
                 ErrorCode::InvalidArgument, "encode_write: labels/slots must match batch");
    EncodedFeatures<S> f = enc.forward(refs);
    if (!cfg.dynamic_memory) return f;
    for (int64_t r = 0; r < R; ++r) {
      for (int t = 0; t < schema.num_types(); ++t) {
        int64_t gid = schema.global_id(t, labels[size_t(r)][size_t(t)]);
        memory.write(0, gid, slots[size_t(r)], select_batch(f.high[size_t(t)], r));
        if (cfg.has_mid_level())
          memory.write(1, gid, slots[size_t(r)], select_batch(f.mid[size_t(t)], r));
      }
    }
    return f;
  }

  // Reads one component feature; at the high level the persistent embedding
  // is added on top of the dynamic feature. With the dynamic memory disabled
  // the persistent embedding alone stands in for the component.
  VarT<S> read_component(int level, int t, int label, int64_t slot) const {
    int64_t gid = schema.global_id(t, label);
    if (!cfg.dynamic_memory) {
      VarT<S> p = pm.read({gid});
      return reshape(p, Shape{p.shape()[1], p.shape()[2], p.shape()[3]});
    }
    if (!memory.has(level, gid, slot))
      raise(ErrorCode::MissingComponent,
            "style slot " + std::to_string(slot) + " has no reference covering " +
                schema.type(t).name + ":" + schema.label_name(t, label));
    VarT<S> f = memory.read(level, gid, slot);
    if (level == 0 && cfg.persistent_memory) {
      VarT<S> p = pm.read({gid});
      f = add(f, reshape(p, Shape{p.shape()[1], p.shape()[2], p.shape()[3]}));
    }
    return f;
  }

  // Decodes a batch of target characters, one style slot per target.
  VarT<S> decode(const std::vector<CharLabels>& targets, const std::vector<int64_t>& slots) {
    auto provider = [&](int level, int t, size_t b) {
      return read_component(level, t, targets[b][size_t(t)], slots[b]);
    };
    return decode_with(targets.size(), provider);
  }

  // Decodes one character with the chosen component type's features linearly
  // interpolated between two style slots. Endpoints return the stored
  // features untouched.
  VarT<S> mix(const CharLabels& target, int64_t slot_a, int64_t slot_b, int mixed_type,
              double alpha) {
    DMFONT_CHECK(mixed_type >= 0 && mixed_type < schema.num_types(), ErrorCode::InvalidArgument,
                 "mixed_type out of range");
    DMFONT_CHECK(alpha >= 0.0 && alpha <= 1.0, ErrorCode::InvalidArgument,
                 "alpha must be in [0,1]");
    auto provider = [&](int level, int t, size_t) {
      int label = target[size_t(t)];
      if (t != mixed_type) return read_component(level, t, label, slot_a);
      if (alpha == 0.0) return read_component(level, t, label, slot_a);
      if (alpha == 1.0) return read_component(level, t, label, slot_b);
      VarT<S> fa = read_component(level, t, label, slot_a);
      VarT<S> fb = read_component(level, t, label, slot_b);
      return add(mul_scalar(fa, S(1.0 - alpha)), mul_scalar(fb, S(alpha)));
    };
    return decode_with(1, provider);
  }

  void reset_memory() { memory.reset(); }

  void params(const std::string& p, ParamRefs<S>& out) {
    enc.params(p + ".enc", out);
    dec.params(p + ".dec", out);
    if (cfg.persistent_memory) pm.params(p + ".pm", out);
  }

 private:
  template <typename Provider>
  VarT<S> decode_with(size_t batch, Provider&& provider) {
    std::vector<VarT<S>> high_parts, mid_parts;
    for (int t = 0; t < schema.num_types(); ++t) {
      std::vector<VarT<S>> hb, mb;
      for (size_t b = 0; b < batch; ++b) {
        hb.push_back(provider(0, t, b));
        if (cfg.has_mid_level()) mb.push_back(provider(1, t, b));
      }
      high_parts.push_back(stack_batch(hb));
      if (cfg.has_mid_level()) mid_parts.push_back(stack_batch(mb));
    }
    VarT<S> high = concat_channels(high_parts);
    VarT<S> mid;
    if (cfg.has_mid_level()) mid = concat_channels(mid_parts);
    return dec.forward(high, mid);
  }
};

}  // namespace dmfont
