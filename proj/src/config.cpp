#include "acc/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <unordered_map>

namespace acc {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

[[noreturn]] void bad_value(const std::string& where, const std::string& value,
                            const std::string& want) {
    throw ParseError(where + ": cannot read \"" + value + "\" as " + want);
}

int64_t parse_i64(const std::string& v, const std::string& where) {
    int64_t out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
        bad_value(where, v, "an integer");
    return out;
}

uint64_t parse_u64(const std::string& v, const std::string& where) {
    uint64_t out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
        bad_value(where, v, "a non-negative integer");
    return out;
}

int parse_int(const std::string& v, const std::string& where) {
    return static_cast<int>(parse_i64(v, where));
}

real parse_real_value(const std::string& v, const std::string& where) {
    double out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) bad_value(where, v, "a number");
    return static_cast<real>(out);
}

bool parse_bool(const std::string& v, const std::string& where) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    bad_value(where, v, "true or false");
}

Rational parse_rational(const std::string& v, const std::string& where) {
    const size_t slash = v.find('/');
    Rational r;
    if (slash == std::string::npos) {
        r.num = static_cast<uint32_t>(parse_u64(v, where));
        r.den = 1;
    } else {
        r.num = static_cast<uint32_t>(parse_u64(v.substr(0, slash), where));
        r.den = static_cast<uint32_t>(parse_u64(v.substr(slash + 1), where));
    }
    if (r.num == 0 || r.den == 0) bad_value(where, v, "a positive rate (num or num/den)");
    return r;
}

// "32x10x5,64x8x4": channels x kernel x stride per layer.
std::vector<ConvLayerSpec> parse_conv(const std::string& v, const std::string& where) {
    std::vector<ConvLayerSpec> layers;
    size_t start = 0;
    while (start <= v.size()) {
        size_t comma = v.find(',', start);
        if (comma == std::string::npos) comma = v.size();
        const std::string item = trim(v.substr(start, comma - start));
        const size_t x1 = item.find('x');
        const size_t x2 = x1 == std::string::npos ? std::string::npos : item.find('x', x1 + 1);
        if (item.empty() || x2 == std::string::npos || item.find('x', x2 + 1) != std::string::npos)
            bad_value(where, v, "a conv stack like 32x10x5,64x8x4");
        ConvLayerSpec layer;
        layer.channels = parse_i64(item.substr(0, x1), where);
        layer.kernel = parse_i64(item.substr(x1 + 1, x2 - x1 - 1), where);
        layer.stride = parse_i64(item.substr(x2 + 1), where);
        layers.push_back(layer);
        if (comma == v.size()) break;
        start = comma + 1;
    }
    if (layers.empty()) bad_value(where, v, "a conv stack like 32x10x5,64x8x4");
    return layers;
}

std::string fmt_real(real v) {
    char buf[48];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string fmt_rational(Rational r) {
    return std::to_string(r.num) + "/" + std::to_string(r.den);
}

std::string fmt_conv(const std::vector<ConvLayerSpec>& conv) {
    std::string s;
    for (const ConvLayerSpec& l : conv) {
        if (!s.empty()) s += ",";
        s += std::to_string(l.channels) + "x" + std::to_string(l.kernel) + "x" +
             std::to_string(l.stride);
    }
    return s;
}

std::string fmt_bool(bool b) {
    return b ? "true" : "false";
}

using Setter = std::function<void(RunConfig&, const std::string& value, const std::string& where)>;

const std::unordered_map<std::string, Setter>& setters() {
    static const std::unordered_map<std::string, Setter> table = {
        {"pipeline.fps",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.pipeline.fps_target = parse_rational(v, w);
         }},
        {"pipeline.sample_rate",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.pipeline.sample_rate = parse_int(v, w);
         }},
        {"pipeline.image_size",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.pipeline.image_size = parse_i64(v, w);
         }},
        {"pipeline.channels",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.pipeline.channels = parse_int(v, w);
         }},
        {"vit.patch_size",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.model.vit.patch_size = parse_i64(v, w);
         }},
        {"vit.embed_dim",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.model.vit.embed_dim = parse_i64(v, w);
         }},
        {"vit.depth",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.model.vit.depth = parse_i64(v, w);
         }},
        {"vit.heads",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.model.vit.heads = parse_i64(v, w);
         }},
        {"vit.mlp_dim",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.model.vit.mlp_dim = parse_i64(v, w);
         }},
        {"vit.dropout",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.model.vit.dropout = parse_real_value(v, w);
         }},
        {"vit.sinusoidal_pos",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.model.vit.sinusoidal_pos = parse_bool(v, w);
         }},
        {"audio.conv",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.model.audio.conv = parse_conv(v, w);
         }},
        {"audio.embed_dim",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.model.audio.embed_dim = parse_i64(v, w);
         }},
        {"audio.depth",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.model.audio.depth = parse_i64(v, w);
         }},
        {"audio.heads",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.model.audio.heads = parse_i64(v, w);
         }},
        {"audio.mlp_dim",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.model.audio.mlp_dim = parse_i64(v, w);
         }},
        {"audio.dropout",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.model.audio.dropout = parse_real_value(v, w);
         }},
        {"audio.frozen",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.model.audio.frozen = parse_bool(v, w);
         }},
        {"model.mode",
         [](RunConfig& c, const std::string& v, const std::string&) {
             c.model.mode = mode_from_name(v);
         }},
        {"model.dimension",
         [](RunConfig& c, const std::string& v, const std::string&) {
             c.model.dim = dim_from_name(v);
         }},
        {"model.lambda_cos",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.model.lambda_cos = parse_real_value(v, w);
         }},
        {"model.contrast_len",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.model.contrast_len = parse_i64(v, w);
         }},
        {"model.proj_dim",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.model.proj_dim = parse_i64(v, w);
         }},
        {"model.in_batch_negatives",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.model.in_batch_negatives = parse_bool(v, w);
         }},
        {"model.neg_margin",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.model.neg_margin = parse_real_value(v, w);
         }},
        {"train.epochs",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.train.epochs = parse_int(v, w);
         }},
        {"train.batch_size",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.train.batch_size = parse_i64(v, w);
         }},
        {"train.lr",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.train.lr = parse_real_value(v, w);
         }},
        {"train.weight_decay",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.train.weight_decay = parse_real_value(v, w);
         }},
        {"train.seed",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.train.seed = parse_u64(v, w);
         }},
        {"train.fold",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.train.fold = parse_int(v, w);
         }},
        {"train.patience",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.train.patience = parse_int(v, w);
         }},
        {"folds.k",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.folds.k = parse_int(v, w);
         }},
        {"folds.seed",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.folds.seed = parse_u64(v, w);
         }},
        {"folds.policy",
         [](RunConfig& c, const std::string& v, const std::string&) {
             c.folds.policy = fold_policy_from_name(v);
         }},
        {"synth.n_speakers",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.synth.n_speakers = parse_int(v, w);
         }},
        {"synth.n_male",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.synth.n_male = parse_int(v, w);
         }},
        {"synth.sentences_per_speaker",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.synth.sentences_per_speaker = parse_int(v, w);
         }},
        {"synth.phones_per_sentence",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.synth.phones_per_sentence = parse_int(v, w);
         }},
        {"synth.fps",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.synth.fps = parse_rational(v, w);
         }},
        {"synth.sample_rate",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.synth.sample_rate = parse_int(v, w);
         }},
        {"synth.image_size",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.synth.image_size = parse_int(v, w);
         }},
        {"synth.seed",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.synth.seed = parse_u64(v, w);
         }},
    };
    return table;
}

const std::vector<std::string>& known_sections() {
    static const std::vector<std::string> names = {"pipeline", "vit",   "audio", "model",
                                                   "train",    "folds", "synth"};
    return names;
}

}  // namespace

void RunConfig::finalize() {
    model.vit.image_size = pipeline.image_size;
    model.vit.channels = pipeline.channels;
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
    RunConfig rc;
    std::string section;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const std::string where = origin + ":" + std::to_string(lineno);
        const std::string line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ParseError(where + ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            const auto& names = known_sections();
            if (std::find(names.begin(), names.end(), section) == names.end())
                throw UsageError(where + ": unknown section [" + section + "]");
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError(where + ": expected key = value, got \"" + line + "\"");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (section.empty()) throw UsageError(where + ": key \"" + key + "\" before any section");
        if (key.empty()) throw ParseError(where + ": empty key");
        const auto it = setters().find(section + "." + key);
        if (it == setters().end())
            throw UsageError(where + ": unknown key \"" + key + "\" in [" + section + "]");
        it->second(rc, value, where);
    }
    rc.finalize();
    return rc;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read config " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), path);
}

std::string format_run_config(const RunConfig& rc) {
    std::string s;
    s += "[pipeline]\n";
    s += "fps = " + fmt_rational(rc.pipeline.fps_target) + "\n";
    s += "sample_rate = " + std::to_string(rc.pipeline.sample_rate) + "\n";
    s += "image_size = " + std::to_string(rc.pipeline.image_size) + "\n";
    s += "channels = " + std::to_string(rc.pipeline.channels) + "\n";
    s += "\n[vit]\n";
    s += "patch_size = " + std::to_string(rc.model.vit.patch_size) + "\n";
    s += "embed_dim = " + std::to_string(rc.model.vit.embed_dim) + "\n";
    s += "depth = " + std::to_string(rc.model.vit.depth) + "\n";
    s += "heads = " + std::to_string(rc.model.vit.heads) + "\n";
    s += "mlp_dim = " + std::to_string(rc.model.vit.mlp_dim) + "\n";
    s += "dropout = " + fmt_real(rc.model.vit.dropout) + "\n";
    s += "sinusoidal_pos = " + fmt_bool(rc.model.vit.sinusoidal_pos) + "\n";
    s += "\n[audio]\n";
    s += "conv = " + fmt_conv(rc.model.audio.conv) + "\n";
    s += "embed_dim = " + std::to_string(rc.model.audio.embed_dim) + "\n";
    s += "depth = " + std::to_string(rc.model.audio.depth) + "\n";
    s += "heads = " + std::to_string(rc.model.audio.heads) + "\n";
    s += "mlp_dim = " + std::to_string(rc.model.audio.mlp_dim) + "\n";
    s += "dropout = " + fmt_real(rc.model.audio.dropout) + "\n";
    s += "frozen = " + fmt_bool(rc.model.audio.frozen) + "\n";
    s += "\n[model]\n";
    s += "mode = " + mode_name(rc.model.mode) + "\n";
    s += "dimension = " + dim_name(rc.model.dim) + "\n";
    s += "lambda_cos = " + fmt_real(rc.model.lambda_cos) + "\n";
    s += "contrast_len = " + std::to_string(rc.model.contrast_len) + "\n";
    s += "proj_dim = " + std::to_string(rc.model.proj_dim) + "\n";
    s += "in_batch_negatives = " + fmt_bool(rc.model.in_batch_negatives) + "\n";
    s += "neg_margin = " + fmt_real(rc.model.neg_margin) + "\n";
    s += "\n[train]\n";
    s += "epochs = " + std::to_string(rc.train.epochs) + "\n";
    s += "batch_size = " + std::to_string(rc.train.batch_size) + "\n";
    s += "lr = " + fmt_real(rc.train.lr) + "\n";
    s += "weight_decay = " + fmt_real(rc.train.weight_decay) + "\n";
    s += "seed = " + std::to_string(rc.train.seed) + "\n";
    s += "fold = " + std::to_string(rc.train.fold) + "\n";
    s += "patience = " + std::to_string(rc.train.patience) + "\n";
    s += "\n[folds]\n";
    s += "k = " + std::to_string(rc.folds.k) + "\n";
    s += "seed = " + std::to_string(rc.folds.seed) + "\n";
    s += "policy = " + fold_policy_name(rc.folds.policy) + "\n";
    s += "\n[synth]\n";
    s += "n_speakers = " + std::to_string(rc.synth.n_speakers) + "\n";
    s += "n_male = " + std::to_string(rc.synth.n_male) + "\n";
    s += "sentences_per_speaker = " + std::to_string(rc.synth.sentences_per_speaker) + "\n";
    s += "phones_per_sentence = " + std::to_string(rc.synth.phones_per_sentence) + "\n";
    s += "fps = " + fmt_rational(rc.synth.fps) + "\n";
    s += "sample_rate = " + std::to_string(rc.synth.sample_rate) + "\n";
    s += "image_size = " + std::to_string(rc.synth.image_size) + "\n";
    s += "seed = " + std::to_string(rc.synth.seed) + "\n";
    return s;
}

uint64_t arch_hash(const RunConfig& rc) {
    std::string s = "arch";
    s += "|mode=" + mode_name(rc.model.mode);
    s += "|dim=" + dim_name(rc.model.dim);
    s += "|fps=" + fmt_rational(rc.pipeline.fps_target);
    s += "|sr=" + std::to_string(rc.pipeline.sample_rate);
    s += "|img=" + std::to_string(rc.pipeline.image_size);
    s += "|ch=" + std::to_string(rc.pipeline.channels);
    s += "|patch=" + std::to_string(rc.model.vit.patch_size);
    s += "|vembed=" + std::to_string(rc.model.vit.embed_dim);
    s += "|vdepth=" + std::to_string(rc.model.vit.depth);
    s += "|vheads=" + std::to_string(rc.model.vit.heads);
    s += "|vmlp=" + std::to_string(rc.model.vit.mlp_dim);
    s += "|vpos=" + fmt_bool(rc.model.vit.sinusoidal_pos);
    s += "|conv=" + fmt_conv(rc.model.audio.conv);
    s += "|aembed=" + std::to_string(rc.model.audio.embed_dim);
    s += "|adepth=" + std::to_string(rc.model.audio.depth);
    s += "|aheads=" + std::to_string(rc.model.audio.heads);
    s += "|amlp=" + std::to_string(rc.model.audio.mlp_dim);
    s += "|clen=" + std::to_string(rc.model.contrast_len);
    s += "|pdim=" + std::to_string(rc.model.proj_dim);
    return fnv1a64(s);
}

}  // namespace acc
