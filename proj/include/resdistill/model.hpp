#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "resdistill/common.hpp"
#include "resdistill/ops.hpp"
#include "resdistill/optim.hpp"
#include "resdistill/tensor.hpp"

namespace resdistill {

struct ModelConfig {
    std::vector<int> stage_widths{16, 32, 64, 128};
    int blocks_per_stage = 1;
    int num_classes = 3;
    int num_groups = 8;
    int input_channels = 3;

    void validate() const {
        if (stage_widths.empty()) throw std::invalid_argument("ModelConfig: stage_widths empty");
        if (blocks_per_stage < 1) throw std::invalid_argument("ModelConfig: blocks_per_stage must be >= 1");
        if (num_classes < 2) throw std::invalid_argument("ModelConfig: num_classes must be >= 2");
        if (num_groups < 1) throw std::invalid_argument("ModelConfig: num_groups must be >= 1");
        if (input_channels < 1) throw std::invalid_argument("ModelConfig: input_channels must be >= 1");
        for (int wdt : stage_widths)
            if (wdt < 1 || wdt % num_groups != 0)
                throw std::invalid_argument("ModelConfig: width " + std::to_string(wdt) +
                                            " not divisible by num_groups " + std::to_string(num_groups));
    }

    // Stem plus one stride-2 reduction per stage; each must leave >= 1 cell.
    int min_input_side() const { return 1 << (1 + int(stage_widths.size())); }

    bool operator==(const ModelConfig&) const = default;
};

// 2 FLOPs per multiply-accumulate.
inline std::uint64_t conv_flops(int k, int cin, int cout, int out_h, int out_w) {
    return 2ULL * k * k * cin * cout * std::uint64_t(out_h) * out_w;
}

template <typename T>
struct ModelOutput {
    TensorPtr<T> feature_map; // [B, C_last, h, w], post-activation
    TensorPtr<T> logits;      // [B, num_classes]
};

// conv + group-norm pair (the affine norm parameters live alongside the conv).
template <typename T>
struct ConvUnit {
    Parameter<T> weight, bias, gamma, beta;
    int stride = 1;
    int pad = 1;
};

template <typename T>
struct ResidualBlock {
    ConvUnit<T> conv1, conv2;
    bool has_proj = false;
    ConvUnit<T> proj; // 1x1, pad 0, matching stride
};

template <typename T>
class Model {
public:
    ModelConfig config;
    ConvUnit<T> stem;
    std::vector<std::vector<ResidualBlock<T>>> stages;
    Parameter<T> fc_weight, fc_bias;

    std::vector<Parameter<T>*> parameters() {
        std::vector<Parameter<T>*> out;
        auto push_unit = [&](ConvUnit<T>& u) {
            out.push_back(&u.weight);
            out.push_back(&u.bias);
            out.push_back(&u.gamma);
            out.push_back(&u.beta);
        };
        push_unit(stem);
        for (auto& stage : stages)
            for (auto& block : stage) {
                push_unit(block.conv1);
                push_unit(block.conv2);
                if (block.has_proj) push_unit(block.proj);
            }
        out.push_back(&fc_weight);
        out.push_back(&fc_bias);
        return out;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for (auto* p : parameters()) n += p->value->numel();
        return n;
    }

    void set_trainable(bool on) {
        for (auto* p : parameters()) {
            p->value->requires_grad = on;
            if (on) p->value->ensure_grad();
            else p->value->clear_grad();
        }
    }

    void freeze_except_fc() {
        set_trainable(false);
        fc_weight.value->requires_grad = true;
        fc_bias.value->requires_grad = true;
    }

    void unfreeze_all() { set_trainable(true); }

    ModelOutput<T> forward(const TensorPtr<T>& input) {
        if (input->shape.size() != 4)
            throw std::invalid_argument("forward: input must be [B,C,H,W]");
        if (input->shape[1] != config.input_channels)
            throw std::invalid_argument("forward: expected " + std::to_string(config.input_channels) +
                                        " input channels, got " + std::to_string(input->shape[1]));
        const int h = input->shape[2], w = input->shape[3];
        if (h < config.min_input_side() || w < config.min_input_side())
            throw std::invalid_argument("forward: input " + std::to_string(h) + "x" + std::to_string(w) +
                                        " too small; this architecture needs at least " +
                                        std::to_string(config.min_input_side()) + " per side");

        auto unit = [&](ConvUnit<T>& u, const TensorPtr<T>& x, bool activate) {
            auto y = conv2d(x, u.weight.value, u.bias.value, u.stride, u.pad);
            y = group_norm(y, config.num_groups, u.gamma.value, u.beta.value, T(1e-5));
            return activate ? relu(y) : y;
        };

        auto x = unit(stem, input, true);
        for (auto& stage : stages) {
            for (auto& block : stage) {
                auto shortcut = block.has_proj ? unit(block.proj, x, false) : x;
                auto y = unit(block.conv1, x, true);
                y = unit(block.conv2, y, false);
                x = relu(add(y, shortcut));
            }
        }

        ModelOutput<T> out;
        out.feature_map = x;
        out.logits = linear(global_avg_pool(x), fc_weight.value, fc_bias.value);
        return out;
    }

    // Forward-pass FLOPs for an input of the given size: convs/linear at 2
    // per multiply-accumulate, norm/activation/pool/add at 1 per element.
    std::uint64_t count_flops(int h, int w) const {
        if (h < config.min_input_side() || w < config.min_input_side())
            throw std::invalid_argument("count_flops: input too small");
        auto ceil_half = [](int d) { return (d + 1) / 2; };
        std::uint64_t total = 0;
        auto conv_unit = [&](int cin, int cout, int k, int oh, int ow, bool activate) {
            std::uint64_t elems = std::uint64_t(cout) * oh * ow;
            total += conv_flops(k, cin, cout, oh, ow);
            total += elems;               // group norm
            if (activate) total += elems; // relu
        };

        int ch = ceil_half(h), cw = ceil_half(w);
        int cin = config.input_channels;
        conv_unit(cin, config.stage_widths[0], 3, ch, cw, true);
        cin = config.stage_widths[0];

        for (std::size_t s = 0; s < config.stage_widths.size(); ++s) {
            int cout = config.stage_widths[s];
            for (int b = 0; b < config.blocks_per_stage; ++b) {
                bool first = b == 0;
                int oh = first ? ceil_half(ch) : ch, ow = first ? ceil_half(cw) : cw;
                conv_unit(cin, cout, 3, oh, ow, true);         // conv1 (stride on first)
                conv_unit(cout, cout, 3, oh, ow, false);       // conv2
                if (first || cin != cout) conv_unit(cin, cout, 1, oh, ow, false); // projection
                total += 2ULL * cout * oh * ow;                // residual add + final relu
                ch = oh;
                cw = ow;
                cin = cout;
            }
        }
        total += std::uint64_t(cin) * ch * cw;                   // global average pool
        total += 2ULL * cin * config.num_classes;                // linear head
        return total;
    }
};

// Builds a He-initialized model. Every parameter draws from its own stream
// derived from (seed, parameter name), so initialization is independent of
// construction order and bit-reproducible.
template <typename T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model<T> m;
    m.config = cfg;

    auto make_unit = [&](const std::string& name, int cin, int cout, int k, int stride) {
        ConvUnit<T> u;
        u.stride = stride;
        u.pad = k / 2;
        u.weight = Parameter<T>(name + ".weight",
                                he_init<T>({cout, cin, k, k}, cin * k * k, derive_seed(seed, name + ".weight")));
        u.bias = Parameter<T>(name + ".bias", make_tensor<T>({cout}));
        auto ones = make_tensor<T>({cout});
        std::fill(ones->data.begin(), ones->data.end(), T(1));
        u.gamma = Parameter<T>(name + ".gamma", ones);
        u.beta = Parameter<T>(name + ".beta", make_tensor<T>({cout}));
        return u;
    };

    m.stem = make_unit("stem", cfg.input_channels, cfg.stage_widths[0], 3, 2);
    int cin = cfg.stage_widths[0];
    for (std::size_t s = 0; s < cfg.stage_widths.size(); ++s) {
        int cout = cfg.stage_widths[s];
        std::vector<ResidualBlock<T>> stage;
        for (int b = 0; b < cfg.blocks_per_stage; ++b) {
            const std::string base = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
            ResidualBlock<T> block;
            int stride = b == 0 ? 2 : 1;
            block.conv1 = make_unit(base + ".conv1", cin, cout, 3, stride);
            block.conv2 = make_unit(base + ".conv2", cout, cout, 3, 1);
            block.has_proj = stride != 1 || cin != cout;
            if (block.has_proj) block.proj = make_unit(base + ".proj", cin, cout, 1, stride);
            stage.push_back(std::move(block));
            cin = cout;
        }
        m.stages.push_back(std::move(stage));
    }
    m.fc_weight = Parameter<T>(
        "fc.weight", he_init<T>({cfg.num_classes, cin}, cin, derive_seed(seed, "fc.weight")));
    m.fc_bias = Parameter<T>("fc.bias", make_tensor<T>({cfg.num_classes}));
    return m;
}

// ------------------------------------------------------------- checkpointing
//
// Flat binary container: magic + version + dtype width, the ModelConfig, then
// each named parameter as (name, shape, raw values). Values are written in
// the host's little-endian layout.

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void write_i32(std::ostream& os, std::int32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw std::runtime_error("checkpoint: truncated file");
    return v;
}
inline std::int32_t read_i32(std::istream& is) {
    std::int32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

constexpr char kCheckpointMagic[4] = {'R', 'D', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

} // namespace detail

template <typename T>
void save_checkpoint(Model<T>& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    os.write(detail::kCheckpointMagic, 4);
    detail::write_u32(os, detail::kCheckpointVersion);
    detail::write_u32(os, std::uint32_t(sizeof(T)));

    const auto& cfg = model.config;
    detail::write_u32(os, std::uint32_t(cfg.stage_widths.size()));
    for (int w : cfg.stage_widths) detail::write_i32(os, w);
    detail::write_i32(os, cfg.blocks_per_stage);
    detail::write_i32(os, cfg.num_classes);
    detail::write_i32(os, cfg.num_groups);
    detail::write_i32(os, cfg.input_channels);

    auto params = model.parameters();
    detail::write_u32(os, std::uint32_t(params.size()));
    for (auto* p : params) {
        detail::write_u32(os, std::uint32_t(p->name.size()));
        os.write(p->name.data(), std::streamsize(p->name.size()));
        detail::write_u32(os, std::uint32_t(p->value->shape.size()));
        for (int d : p->value->shape) detail::write_i32(os, d);
        os.write(reinterpret_cast<const char*>(p->value->data.data()),
                 std::streamsize(p->value->numel() * sizeof(T)));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline ModelConfig read_checkpoint_header(std::istream& is, std::uint32_t& dtype_width) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic (not a checkpoint file)");
    std::uint32_t version = detail::read_u32(is);
    if (version != detail::kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    dtype_width = detail::read_u32(is);

    ModelConfig cfg;
    std::uint32_t nw = detail::read_u32(is);
    if (nw == 0 || nw > 64) throw std::runtime_error("checkpoint: implausible stage count");
    cfg.stage_widths.clear();
    for (std::uint32_t i = 0; i < nw; ++i) cfg.stage_widths.push_back(detail::read_i32(is));
    cfg.blocks_per_stage = detail::read_i32(is);
    cfg.num_classes = detail::read_i32(is);
    cfg.num_groups = detail::read_i32(is);
    cfg.input_channels = detail::read_i32(is);
    return cfg;
}

// Scalar width (4 or 8 bytes) stored in a checkpoint, for precision dispatch.
inline std::uint32_t checkpoint_dtype_width(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    std::uint32_t width = 0;
    read_checkpoint_header(is, width);
    return width;
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    std::uint32_t width = 0;
    ModelConfig cfg = read_checkpoint_header(is, width);
    if (width != sizeof(T))
        throw std::runtime_error("checkpoint: stored precision is " + std::to_string(width * 8) +
                                 "-bit, loader expects " + std::to_string(sizeof(T) * 8) + "-bit");

    Model<T> model = build_model<T>(cfg, 0);
    auto params = model.parameters();
    std::uint32_t count = detail::read_u32(is);
    if (count != params.size())
        throw std::runtime_error("checkpoint: parameter count mismatch (file " + std::to_string(count) +
                                 ", model " + std::to_string(params.size()) + ")");
    for (auto* p : params) {
        std::uint32_t nlen = detail::read_u32(is);
        std::string name(nlen, '\0');
        if (!is.read(name.data(), nlen)) throw std::runtime_error("checkpoint: truncated file");
        if (name != p->name)
            throw std::runtime_error("checkpoint: parameter order mismatch (file " + name + ", model " +
                                     p->name + ")");
        std::uint32_t ndim = detail::read_u32(is);
        std::vector<int> shape;
        for (std::uint32_t i = 0; i < ndim; ++i) shape.push_back(detail::read_i32(is));
        if (shape != p->value->shape)
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        if (!is.read(reinterpret_cast<char*>(p->value->data.data()),
                     std::streamsize(p->value->numel() * sizeof(T))))
            throw std::runtime_error("checkpoint: truncated tensor data for " + name);
    }
    return model;
}

} // namespace resdistill
