#include "tgre/dataio.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace tgre {
namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open " + tmp + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("write failed for " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("rename failed for " + path);
}

[[noreturn]] void pgm_fail(const std::string& path, size_t offset, const std::string& msg) {
    throw Error(path + ": " + msg + " (byte offset " + std::to_string(offset) + ")");
}

// whitespace/comment skipper for the PGM header
size_t pgm_skip(const std::string& s, size_t pos) {
    while (pos < s.size()) {
        if (std::isspace(static_cast<unsigned char>(s[pos]))) {
            ++pos;
        } else if (s[pos] == '#') {
            while (pos < s.size() && s[pos] != '\n') ++pos;
        } else {
            break;
        }
    }
    return pos;
}

int pgm_int(const std::string& s, size_t& pos, const std::string& path) {
    pos = pgm_skip(s, pos);
    size_t start = pos;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos == start) pgm_fail(path, start, "expected integer in header");
    return std::stoi(s.substr(start, pos - start));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float f) {
    uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(out, v);
}

uint32_t get_u32(const std::string& s, size_t pos) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
    return v;
}

uint64_t get_u64(const std::string& s, size_t pos) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
    return v;
}

float get_f32(const std::string& s, size_t pos) {
    uint32_t v = get_u32(s, pos);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

std::vector<int> split_ints(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
    return out;
}

}  // namespace

void write_text_atomic(const std::string& path, const std::string& text) { write_file_atomic(path, text); }

Tensorf load_pgm(const std::string& path) {
    const std::string s = read_file(path);
    if (s.size() < 2 || s[0] != 'P' || s[1] != '5') pgm_fail(path, 0, "not a binary PGM (magic P5 missing)");
    size_t pos = 2;
    const int w = pgm_int(s, pos, path);
    const int h = pgm_int(s, pos, path);
    const size_t maxval_at = pgm_skip(s, pos);
    const int maxval = pgm_int(s, pos, path);
    if (w <= 0 || h <= 0) pgm_fail(path, 2, "non-positive dimensions");
    if (maxval > 255 || maxval <= 0) pgm_fail(path, maxval_at, "maxval " + std::to_string(maxval) + " out of range (need 1..255)");
    if (pos >= s.size() || !std::isspace(static_cast<unsigned char>(s[pos])))
        pgm_fail(path, pos, "missing single whitespace before payload");
    ++pos;  // exactly one whitespace byte separates header and pixels
    const size_t need = static_cast<size_t>(w) * h;
    if (s.size() - pos < need)
        pgm_fail(path, s.size(), "truncated payload: need " + std::to_string(need) + " bytes, have " +
                                     std::to_string(s.size() - pos));
    Tensorf img({h, w});
    for (size_t i = 0; i < need; ++i) img[i] = static_cast<float>(static_cast<unsigned char>(s[pos + i]));
    return img;
}

void save_pgm(const std::string& path, const Tensorf& image) {
    if (image.rank() != 2) throw Error("save_pgm: image must be rank 2, got " + shape_str(image.shape));
    std::string out = "P5\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) + "\n255\n";
    for (size_t i = 0; i < image.numel(); ++i) {
        const float v = std::clamp(image[i], 0.0f, 255.0f);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v))));
    }
    write_file_atomic(path, out);
}

Shape load_pts(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    auto fail = [&](const std::string& msg) { throw Error(path + ": " + msg); };
    std::string line;
    if (!std::getline(in, line) || line.rfind("version:", 0) != 0) fail("expected 'version: 1' on line 1");
    std::string word, rest;
    {
        std::istringstream ls(line);
        ls >> word >> rest;
        if (rest != "1") fail("unsupported pts version '" + rest + "'");
    }
    if (!std::getline(in, line) || line.rfind("n_points:", 0) != 0) fail("expected 'n_points: N' on line 2");
    int n = 0;
    {
        std::istringstream ls(line);
        ls >> word >> n;
    }
    if (n < 1) fail("n_points must be >= 1");
    if (!std::getline(in, line) || line.find('{') == std::string::npos) fail("expected '{' on line 3");
    Shape shape(n);
    for (int i = 0; i < n; ++i) {
        if (!std::getline(in, line)) fail("body ended after " + std::to_string(i) + " of " + std::to_string(n) + " points");
        std::istringstream ls(line);
        if (!(ls >> shape.x(i) >> shape.y(i)))
            fail("cannot parse point " + std::to_string(i) + " from '" + line + "'");
    }
    if (!std::getline(in, line) || line.find('}') == std::string::npos)
        fail("expected '}' after " + std::to_string(n) + " points (n_points mismatch?)");
    return shape;
}

void save_pts(const std::string& path, const Shape& shape) {
    std::ostringstream out;
    out << "version: 1\n"
        << "n_points: " << shape.points() << "\n{\n";
    char buf[64];
    for (int i = 0; i < shape.points(); ++i) {
        std::snprintf(buf, sizeof buf, "%.6f %.6f\n", shape.x(i), shape.y(i));
        out << buf;
    }
    out << "}\n";
    write_file_atomic(path, out.str());
}

Tensorf normalize_image(const Tensorf& raw) {
    Tensorf out(raw.shape);
    for (size_t i = 0; i < raw.numel(); ++i) out[i] = raw[i] / 127.5f - 1.0f;
    return out;
}

Tensorf denormalize_image(const Tensorf& norm) {
    Tensorf out(norm.shape);
    for (size_t i = 0; i < norm.numel(); ++i) out[i] = std::clamp((norm[i] + 1.0f) * 127.5f, 0.0f, 255.0f);
    return out;
}

std::vector<Sample> load_dataset_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw Error(dir + " is not a directory");
    std::vector<std::string> stems;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".pgm") stems.push_back(entry.path().stem().string());
    }
    std::sort(stems.begin(), stems.end());
    if (stems.empty()) throw Error("no .pgm files in " + dir);
    std::vector<Sample> out;
    for (const std::string& stem : stems) {
        const std::string base = (fs::path(dir) / stem).string();
        if (!fs::exists(base + ".pts")) throw Error("missing " + base + ".pts for " + base + ".pgm");
        Sample s;
        Tensorf raw = load_pgm(base + ".pgm");
        s.shape = load_pts(base + ".pts");
        const float w = static_cast<float>(raw.dim(1)), h = static_cast<float>(raw.dim(0));
        for (int i = 0; i < s.shape.points(); ++i) {
            if (s.shape.x(i) < -0.5f * w || s.shape.x(i) > 1.5f * w || s.shape.y(i) < -0.5f * h ||
                s.shape.y(i) > 1.5f * h)
                throw Error(base + ".pts: landmark " + std::to_string(i) + " far outside the image crop");
        }
        s.image = normalize_image(raw);
        s.id = stem;
        out.push_back(std::move(s));
    }
    return out;
}

void SyntheticSpec::validate() const {
    auto fail = [](const std::string& msg) { throw Error("synthetic spec: " + msg); };
    if (image_size < 8) fail("image_size must be >= 8");
    if (landmarks < 2) fail("landmarks must be >= 2");
    if (blob_sigma <= 0) fail("blob_sigma must be positive");
    if (occluder_prob < 0 || occluder_prob > 1) fail("occluder_prob must be in [0,1]");
    if (occluder_min < 1 || occluder_max < occluder_min) fail("occluder size range invalid");
    if (norm_a == norm_b || norm_a < 0 || norm_b < 0 || norm_a >= landmarks || norm_b >= landmarks)
        fail("normalizer pair must be two distinct landmark indices");
}

Shape synthetic_template(const SyntheticSpec& spec) {
    const float s = static_cast<float>(spec.image_size);
    Shape t(spec.landmarks);
    if (spec.landmarks == 5) {
        const float base[10] = {20, 24, 44, 24, 32, 36, 24, 48, 40, 48};  // layout at size 64
        for (int i = 0; i < 10; ++i) t.xy[static_cast<size_t>(i)] = base[i] * s / 64.0f;
    } else {
        const float cx = s / 2, cy = s / 2, rx = 0.3f * s, ry = 0.28f * s;
        for (int i = 0; i < spec.landmarks; ++i) {
            const float a = 2.0f * 3.14159265358979f * i / spec.landmarks - 1.5707963267949f;
            t.x(i) = cx + rx * std::cos(a);
            t.y(i) = cy + ry * std::sin(a);
        }
    }
    return t;
}

Sample generate_synthetic(const SyntheticSpec& spec, uint64_t index) {
    spec.validate();
    Rng rng = Rng::derive(spec.seed, index);
    const int S = spec.image_size;
    const Shape tmpl = synthetic_template(spec);

    // one similarity jitter about the image center; draw order fixed
    const float sc = 1.0f + static_cast<float>(rng.uniform(-spec.jitter_scale, spec.jitter_scale));
    const float th = static_cast<float>(rng.uniform(-spec.jitter_rotate, spec.jitter_rotate));
    const float tx = static_cast<float>(rng.uniform(-spec.jitter_translate, spec.jitter_translate));
    const float ty = static_cast<float>(rng.uniform(-spec.jitter_translate, spec.jitter_translate));
    const float c = std::cos(th), sn = std::sin(th), half = S / 2.0f;

    Sample out;
    out.shape = Shape(spec.landmarks);
    for (int i = 0; i < spec.landmarks; ++i) {
        const float dx = tmpl.x(i) - half, dy = tmpl.y(i) - half;
        out.shape.x(i) = (th == 0.0f && sc == 1.0f) ? tmpl.x(i) + tx : half + sc * (c * dx - sn * dy) + tx;
        out.shape.y(i) = (th == 0.0f && sc == 1.0f) ? tmpl.y(i) + ty : half + sc * (sn * dx + c * dy) + ty;
    }

    Tensorf raw({S, S});
    const float inv = 1.0f / (2.0f * spec.blob_sigma * spec.blob_sigma);
    for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) {
            float v = 0.0f;
            for (int i = 0; i < spec.landmarks; ++i) {
                const float dx = x - out.shape.x(i), dy = y - out.shape.y(i);
                v += spec.blob_amplitude * std::exp(-(dx * dx + dy * dy) * inv);
            }
            raw[static_cast<size_t>(y) * S + x] = v;
        }
    }
    if (spec.noise_sigma > 0) {
        for (size_t i = 0; i < raw.numel(); ++i)
            raw[i] += static_cast<float>(rng.normal(0.0, spec.noise_sigma));
    }
    if (spec.occluder_prob > 0 && rng.uniform() < spec.occluder_prob) {
        const int ow = spec.occluder_min + static_cast<int>(rng.below(static_cast<uint64_t>(spec.occluder_max - spec.occluder_min + 1)));
        const int oh = spec.occluder_min + static_cast<int>(rng.below(static_cast<uint64_t>(spec.occluder_max - spec.occluder_min + 1)));
        const int ox = static_cast<int>(rng.below(static_cast<uint64_t>(std::max(1, S - ow))));
        const int oy = static_cast<int>(rng.below(static_cast<uint64_t>(std::max(1, S - oh))));
        const float gray = static_cast<float>(rng.uniform(0.0, 255.0));
        for (int y = oy; y < std::min(S, oy + oh); ++y)
            for (int x = ox; x < std::min(S, ox + ow); ++x) raw[static_cast<size_t>(y) * S + x] = gray;
    }
    for (size_t i = 0; i < raw.numel(); ++i) raw[i] = std::clamp(raw[i], 0.0f, 255.0f);
    out.image = normalize_image(raw);
    out.id = "synth-" + std::to_string(index);
    return out;
}

std::vector<Sample> synthetic_dataset(const SyntheticSpec& spec, int count, uint64_t start_index) {
    std::vector<Sample> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(generate_synthetic(spec, start_index + static_cast<uint64_t>(i)));
    return out;
}

uint64_t crc64(const void* data, size_t len, uint64_t crc) {
    // CRC-64/XZ (reflected poly 0xC96C5795D7870F42)
    static const auto table = [] {
        std::array<uint64_t, 256> t{};
        for (uint64_t i = 0; i < 256; ++i) {
            uint64_t v = i;
            for (int b = 0; b < 8; ++b) v = (v >> 1) ^ ((v & 1) ? 0xC96C5795D7870F42ull : 0);
            t[i] = v;
        }
        return t;
    }();
    const auto* p = static_cast<const unsigned char*>(data);
    crc = ~crc;
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xff] ^ (crc >> 8);
    return ~crc;
}

std::string encode_config(const ModelConfig& cfg) {
    std::string out;
    out += "variant=" + std::string(variant_name(cfg.variant)) + "\n";
    out += "stages=" + std::to_string(cfg.stages) + "\n";
    out += "landmarks=" + std::to_string(cfg.landmarks) + "\n";
    out += "image_size=" + std::to_string(cfg.image_size) + "\n";
    out += "patch_size=" + std::to_string(cfg.patch_size) + "\n";
    out += "conv_channels=" + join_ints(cfg.conv_channels) + "\n";
    out += "conv_kernels=" + join_ints(cfg.conv_kernels) + "\n";
    out += "conv_strides=" + join_ints(cfg.conv_strides) + "\n";
    out += "fc_dim=" + std::to_string(cfg.fc_dim) + "\n";
    out += "ensemble_size=" + std::to_string(cfg.ensemble_size) + "\n";
    out += "hidden=" + std::to_string(cfg.hidden) + "\n";
    out += "tree_depth=" + std::to_string(cfg.tree_depth) + "\n";
    return out;
}

ModelConfig decode_config(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw Error("model config: malformed line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto need = [&](const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw Error("model config: missing key '" + key + "'");
        return it->second;
    };
    ModelConfig cfg;
    cfg.variant = parse_variant(need("variant"));
    cfg.stages = std::stoi(need("stages"));
    cfg.landmarks = std::stoi(need("landmarks"));
    cfg.image_size = std::stoi(need("image_size"));
    cfg.patch_size = std::stoi(need("patch_size"));
    cfg.conv_channels = split_ints(need("conv_channels"));
    cfg.conv_kernels = split_ints(need("conv_kernels"));
    cfg.conv_strides = split_ints(need("conv_strides"));
    cfg.fc_dim = std::stoi(need("fc_dim"));
    cfg.ensemble_size = std::stoi(need("ensemble_size"));
    cfg.hidden = std::stoi(need("hidden"));
    cfg.tree_depth = std::stoi(need("tree_depth"));
    cfg.validate();
    return cfg;
}

void save_model(const CascadeModel& model, const std::string& path) {
    if (model.mean_shape.points() != model.cfg.landmarks)
        throw Error("save_model: mean shape has " + std::to_string(model.mean_shape.points()) +
                    " points, config expects " + std::to_string(model.cfg.landmarks));
    const std::string cfg = encode_config(model.cfg);
    std::string out = "TGRE";
    put_u32(out, kModelFileVersion);
    put_u32(out, static_cast<uint32_t>(cfg.size()));
    out += cfg;
    for (float v : model.mean_shape.xy) put_f32(out, v);
    for (const Stage& stage : model.stages) {
        for_each_param(stage, [&](const std::string&, const Tensorf& t) {
            for (size_t i = 0; i < t.numel(); ++i) put_f32(out, t[i]);
        });
    }
    put_u64(out, crc64(out.data(), out.size()));
    write_file_atomic(path, out);
}

CascadeModel load_model(const std::string& path) {
    const std::string s = read_file(path);
    auto fail = [&](const std::string& msg) { throw Error(path + ": " + msg); };
    if (s.size() < 24) fail("truncated file (" + std::to_string(s.size()) + " bytes)");
    if (s.compare(0, 4, "TGRE") != 0) fail("not a model file (bad magic)");
    const uint32_t version = get_u32(s, 4);
    if (version != kModelFileVersion) fail("unknown model file version " + std::to_string(version));
    const uint32_t cfg_len = get_u32(s, 8);
    if (12 + static_cast<size_t>(cfg_len) + 8 > s.size()) fail("truncated config block");
    if (crc64(s.data(), s.size() - 8) != get_u64(s, s.size() - 8)) fail("checksum mismatch (file corrupt)");
    ModelConfig cfg = decode_config(s.substr(12, cfg_len));

    size_t floats = static_cast<size_t>(2 * cfg.landmarks);
    CascadeModel model = init_model(cfg, 0);
    for (Stage& stage : model.stages)
        for_each_param(stage, [&](const std::string&, Tensorf& t) { floats += t.numel(); });
    const size_t expect = 12 + cfg_len + 4 * floats + 8;
    if (s.size() != expect)
        fail("payload size mismatch: expected " + std::to_string(expect) + " bytes, have " + std::to_string(s.size()));

    size_t pos = 12 + cfg_len;
    for (float& v : model.mean_shape.xy) {
        v = get_f32(s, pos);
        pos += 4;
    }
    for (Stage& stage : model.stages) {
        for_each_param(stage, [&](const std::string&, Tensorf& t) {
            for (size_t i = 0; i < t.numel(); ++i) {
                t[i] = get_f32(s, pos);
                pos += 4;
            }
        });
    }
    return model;
}

}  // namespace tgre
