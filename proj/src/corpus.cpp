#include "acc/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string_view>

#include "json.hpp"

namespace fs = std::filesystem;

namespace acc {

namespace {

std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    in.seekg(0, std::ios::end);
    auto n = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<uint8_t> bytes(static_cast<size_t>(n));
    if (n > 0) in.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!in) throw IoError("cannot read " + path);
    return bytes;
}

void write_file_bytes(const std::string& path, const void* data, size_t n) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out) throw IoError("cannot write " + path);
}

uint32_t get_u32le(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
           static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

void put_u32le(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xff));
    out.push_back(static_cast<uint8_t>(v >> 8 & 0xff));
    out.push_back(static_cast<uint8_t>(v >> 16 & 0xff));
    out.push_back(static_cast<uint8_t>(v >> 24 & 0xff));
}

double parse_double_field(std::string_view s, const std::string& origin, int line,
                          const char* what) {
    double v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw ParseError(origin + ":" + std::to_string(line) + ": bad " + what + " '" +
                         std::string(s) + "'");
    return v;
}

std::string format_seconds(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 6);
    if (ec != std::errc()) throw LogicError("time value out of range");
    return std::string(buf, ptr);
}

}  // namespace

Manifest load_manifest(const std::string& path, const Needs& needs) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("manifest " + path + ": " + e.what());
    }
    if (!doc.is_array()) throw ParseError("manifest " + path + ": expected a JSON array");

    Manifest m;
    m.dir = fs::path(path).parent_path().string();
    for (size_t i = 0; i < doc.size(); ++i) {
        const auto& e = doc[i];
        const std::string where = "manifest " + path + "[" + std::to_string(i) + "]";
        if (!e.is_object()) throw ParseError(where + ": expected an object");
        auto str = [&](const char* key) {
            if (!e.contains(key) || !e[key].is_string())
                throw ParseError(where + ": missing string field '" + key + "'");
            return e[key].get<std::string>();
        };
        Utterance u;
        u.id = str("id");
        u.speaker_id = str("speaker_id");
        std::string g = str("gender");
        if (g != "M" && g != "F") throw ParseError(where + ": gender must be 'M' or 'F'");
        u.gender = g[0];
        u.video_path = str("video_path");
        u.audio_path = str("audio_path");
        u.transcript_path = str("transcript_path");
        if (!e.contains("fps") || !e["fps"].is_object() ||
            !e["fps"].contains("num") || !e["fps"].contains("den") ||
            !e["fps"]["num"].is_number_unsigned() || !e["fps"]["den"].is_number_unsigned())
            throw ParseError(where + ": fps must be an object {num, den}");
        u.fps.num = e["fps"]["num"].get<uint32_t>();
        u.fps.den = e["fps"]["den"].get<uint32_t>();
        if (u.fps.num == 0 || u.fps.den == 0)
            throw ParseError(where + ": fps terms must be positive");
        if (!e.contains("sample_rate") || !e["sample_rate"].is_number_integer())
            throw ParseError(where + ": missing integer field 'sample_rate'");
        u.sample_rate = e["sample_rate"].get<int>();
        if (u.sample_rate <= 0) throw ParseError(where + ": sample_rate must be positive");
        m.utterances.push_back(std::move(u));
    }

    std::vector<std::string> missing;
    for (const auto& u : m.utterances) {
        if (needs.video && !fs::exists(m.path(u.video_path))) missing.push_back(u.video_path);
        if (needs.audio && !fs::exists(m.path(u.audio_path))) missing.push_back(u.audio_path);
        if (needs.transcript && !fs::exists(m.path(u.transcript_path)))
            missing.push_back(u.transcript_path);
    }
    if (!missing.empty()) {
        std::string msg = "manifest " + path + ": missing files:";
        for (size_t i = 0; i < missing.size() && i < 8; ++i) msg += " " + missing[i];
        if (missing.size() > 8) msg += " (+" + std::to_string(missing.size() - 8) + " more)";
        throw IoError(msg);
    }
    return m;
}

void save_manifest(const Manifest& m, const std::string& path) {
    nlohmann::ordered_json doc = nlohmann::ordered_json::array();
    for (const auto& u : m.utterances) {
        nlohmann::ordered_json e;
        e["id"] = u.id;
        e["speaker_id"] = u.speaker_id;
        e["gender"] = std::string(1, u.gender);
        e["video_path"] = u.video_path;
        e["audio_path"] = u.audio_path;
        e["transcript_path"] = u.transcript_path;
        e["fps"] = {{"num", u.fps.num}, {"den", u.fps.den}};
        e["sample_rate"] = u.sample_rate;
        doc.push_back(std::move(e));
    }
    std::string text = doc.dump(2);
    text.push_back('\n');
    write_file_bytes(path, text.data(), text.size());
}

Transcript parse_transcript_text(const std::string& text, const std::string& origin) {
    Transcript t;
    int line_no = 0;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        std::string_view line(text.data() + pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) {
            if (pos > text.size()) break;
            continue;
        }

        size_t t1 = line.find('\t');
        size_t t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
        if (t1 == std::string_view::npos || t2 == std::string_view::npos ||
            line.find('\t', t2 + 1) != std::string_view::npos)
            throw ParseError(origin + ":" + std::to_string(line_no) +
                             ": expected 3 tab-separated fields");
        Interval iv;
        iv.start_s = parse_double_field(line.substr(0, t1), origin, line_no, "start time");
        iv.end_s = parse_double_field(line.substr(t1 + 1, t2 - t1 - 1), origin, line_no,
                                      "end time");
        iv.phoneme = strip_stress(std::string(line.substr(t2 + 1)));
        if (iv.phoneme.empty())
            throw ParseError(origin + ":" + std::to_string(line_no) + ": empty phoneme");
        if (iv.start_s < 0)
            throw OrderError(origin + ":" + std::to_string(line_no) + ": negative start time");
        if (iv.start_s >= iv.end_s)
            throw OrderError(origin + ":" + std::to_string(line_no) +
                             ": interval start must precede its end");
        if (!t.intervals.empty() && iv.start_s < t.intervals.back().end_s) {
            if (iv.end_s <= t.intervals.back().start_s)
                throw OrderError(origin + ":" + std::to_string(line_no) +
                                 ": intervals are not sorted by start time");
            throw OverlapError(origin + ":" + std::to_string(line_no) +
                               ": interval overlaps the previous one");
        }
        t.intervals.push_back(std::move(iv));
    }
    return t;
}

Transcript parse_transcript(const std::string& path) {
    auto bytes = read_file_bytes(path);
    return parse_transcript_text(std::string(bytes.begin(), bytes.end()), path);
}

void write_transcript(const Transcript& t, const std::string& path) {
    std::string out;
    for (const auto& iv : t.intervals) {
        out += format_seconds(iv.start_s);
        out += '\t';
        out += format_seconds(iv.end_s);
        out += '\t';
        out += iv.phoneme;
        out += '\n';
    }
    write_file_bytes(path, out.data(), out.size());
}

AudioClip read_wav(const std::string& path) {
    auto b = read_file_bytes(path);
    if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 ||
        std::memcmp(b.data() + 8, "WAVE", 4) != 0)
        throw FormatError(path + ": not a RIFF/WAVE file");

    bool have_fmt = false, have_data = false;
    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    size_t data_off = 0, data_size = 0;
    size_t off = 12;
    while (off + 8 <= b.size()) {
        std::string_view id(reinterpret_cast<const char*>(b.data() + off), 4);
        uint32_t sz = get_u32le(b.data() + off + 4);
        size_t body = off + 8;
        if (body + sz > b.size()) throw FormatError(path + ": truncated chunk '" +
                                                    std::string(id) + "'");
        if (id == "fmt ") {
            if (sz < 16) throw FormatError(path + ": fmt chunk too small");
            format = static_cast<uint16_t>(b[body] | b[body + 1] << 8);
            channels = static_cast<uint16_t>(b[body + 2] | b[body + 3] << 8);
            rate = get_u32le(b.data() + body + 4);
            bits = static_cast<uint16_t>(b[body + 14] | b[body + 15] << 8);
            have_fmt = true;
        } else if (id == "data") {
            data_off = body;
            data_size = sz;
            have_data = true;
        }
        off = body + sz + (sz & 1);
    }
    if (!have_fmt) throw FormatError(path + ": missing fmt chunk");
    if (!have_data) throw FormatError(path + ": missing data chunk");
    if (format != 1)
        throw UnsupportedEncoding(path + ": WAV format tag " + std::to_string(format) +
                                  " (only PCM is supported)");
    if (channels != 1)
        throw UnsupportedEncoding(path + ": " + std::to_string(channels) +
                                  " channels (only mono is supported)");
    if (bits != 16)
        throw UnsupportedEncoding(path + ": " + std::to_string(bits) +
                                  "-bit samples (only 16-bit is supported)");
    if (rate == 0) throw FormatError(path + ": zero sample rate");
    if (data_size % 2 != 0) throw FormatError(path + ": odd data chunk size");

    AudioClip clip;
    clip.sample_rate = static_cast<int>(rate);
    clip.samples.resize(data_size / 2);
    for (size_t i = 0; i < clip.samples.size(); ++i) {
        uint16_t v = static_cast<uint16_t>(b[data_off + 2 * i] | b[data_off + 2 * i + 1] << 8);
        clip.samples[i] = static_cast<int16_t>(v);
    }
    return clip;
}

void write_wav(const AudioClip& clip, const std::string& path) {
    const uint32_t data_size = static_cast<uint32_t>(clip.samples.size() * 2);
    std::vector<uint8_t> out;
    out.reserve(44 + data_size);
    auto tag = [&](const char* s) { out.insert(out.end(), s, s + 4); };
    tag("RIFF");
    put_u32le(out, 36 + data_size);
    tag("WAVE");
    tag("fmt ");
    put_u32le(out, 16);
    out.push_back(1); out.push_back(0);  // PCM
    out.push_back(1); out.push_back(0);  // mono
    put_u32le(out, static_cast<uint32_t>(clip.sample_rate));
    put_u32le(out, static_cast<uint32_t>(clip.sample_rate) * 2);
    out.push_back(2); out.push_back(0);  // block align
    out.push_back(16); out.push_back(0);
    tag("data");
    put_u32le(out, data_size);
    for (int16_t s : clip.samples) {
        uint16_t v = static_cast<uint16_t>(s);
        out.push_back(static_cast<uint8_t>(v & 0xff));
        out.push_back(static_cast<uint8_t>(v >> 8));
    }
    write_file_bytes(path, out.data(), out.size());
}

namespace {

// Modified Bessel function of the first kind, order zero; power series.
double bessel_i0(double x) {
    double sum = 1.0, term = 1.0;
    const double q = x * x * 0.25;
    for (int k = 1; k < 64; ++k) {
        term *= q / (static_cast<double>(k) * k);
        sum += term;
        if (term < sum * 1e-14) break;
    }
    return sum;
}

}  // namespace

AudioClip resample_audio(const AudioClip& in, int target_rate) {
    if (target_rate <= 0) throw LogicError("resample_audio: non-positive target rate");
    if (in.sample_rate == target_rate) return in;

    constexpr int kHalfWidth = 32;
    constexpr double kBeta = 8.0;
    const double i0_beta = bessel_i0(kBeta);
    const double fc = std::min(1.0, static_cast<double>(target_rate) / in.sample_rate);
    const double step = static_cast<double>(in.sample_rate) / target_rate;
    const int64_t n_in = static_cast<int64_t>(in.samples.size());
    const int64_t n_out = n_in * target_rate / in.sample_rate;

    AudioClip out;
    out.sample_rate = target_rate;
    out.samples.resize(static_cast<size_t>(n_out));
    for (int64_t j = 0; j < n_out; ++j) {
        const double center = j * step;
        const int64_t i_lo = static_cast<int64_t>(std::ceil(center - kHalfWidth));
        const int64_t i_hi = static_cast<int64_t>(std::floor(center + kHalfWidth));
        double acc = 0, wsum = 0;
        for (int64_t i = i_lo; i <= i_hi; ++i) {
            const double t = i - center;
            const double x = fc * t;
            const double sinc = x == 0 ? 1.0 : std::sin(M_PI * x) / (M_PI * x);
            const double u = t / kHalfWidth;
            const double win = bessel_i0(kBeta * std::sqrt(std::max(0.0, 1.0 - u * u))) / i0_beta;
            const double w = fc * sinc * win;
            wsum += w;
            if (i >= 0 && i < n_in) acc += w * in.samples[static_cast<size_t>(i)];
        }
        double v = wsum != 0 ? acc / wsum : 0.0;
        v = std::min(32767.0, std::max(-32768.0, v));
        out.samples[static_cast<size_t>(j)] = static_cast<int16_t>(std::lround(v));
    }
    return out;
}

VideoClip read_rvf(const std::string& path) {
    auto b = read_file_bytes(path);
    if (b.size() < 24) throw FormatError(path + ": truncated header");
    if (std::memcmp(b.data(), "RVF1", 4) != 0) throw FormatError(path + ": bad magic");
    VideoClip clip;
    clip.height = get_u32le(b.data() + 4);
    clip.width = get_u32le(b.data() + 8);
    clip.n_frames = get_u32le(b.data() + 12);
    clip.fps.num = get_u32le(b.data() + 16);
    clip.fps.den = get_u32le(b.data() + 20);
    if (clip.height == 0 || clip.width == 0 || clip.height > 16384 || clip.width > 16384)
        throw FormatError(path + ": implausible frame size");
    if (clip.fps.num == 0 || clip.fps.den == 0) throw FormatError(path + ": zero fps term");
    const size_t expected = 24 + static_cast<size_t>(clip.height * clip.width * clip.n_frames);
    if (b.size() != expected)
        throw FormatError(path + ": payload size mismatch: expected " +
                          std::to_string(expected) + " bytes, got " + std::to_string(b.size()));
    clip.pixels.assign(b.begin() + 24, b.end());
    return clip;
}

void write_rvf(const VideoClip& clip, const std::string& path) {
    if (clip.pixels.size() != static_cast<size_t>(clip.height * clip.width * clip.n_frames))
        throw LogicError("write_rvf: pixel buffer does not match the header");
    std::vector<uint8_t> out;
    out.reserve(24 + clip.pixels.size());
    out.insert(out.end(), {'R', 'V', 'F', '1'});
    put_u32le(out, static_cast<uint32_t>(clip.height));
    put_u32le(out, static_cast<uint32_t>(clip.width));
    put_u32le(out, static_cast<uint32_t>(clip.n_frames));
    put_u32le(out, clip.fps.num);
    put_u32le(out, clip.fps.den);
    out.insert(out.end(), clip.pixels.begin(), clip.pixels.end());
    write_file_bytes(path, out.data(), out.size());
}

VideoInfo probe_rvf(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    uint8_t b[24];
    in.read(reinterpret_cast<char*>(b), 24);
    if (!in) throw FormatError(path + ": truncated header");
    if (std::memcmp(b, "RVF1", 4) != 0) throw FormatError(path + ": bad magic");
    VideoInfo info;
    info.height = get_u32le(b + 4);
    info.width = get_u32le(b + 8);
    info.n_frames = get_u32le(b + 12);
    info.fps.num = get_u32le(b + 16);
    info.fps.den = get_u32le(b + 20);
    if (info.fps.num == 0 || info.fps.den == 0) throw FormatError(path + ": zero fps term");
    return info;
}

namespace {

std::vector<std::string> list_pgm_files(const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".pgm")
            files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw FormatError(dir + ": no .pgm files");
    return files;
}

struct PgmHeader {
    int64_t width = 0, height = 0;
    size_t data_off = 0;
};

PgmHeader parse_pgm_header(const std::vector<uint8_t>& b, const std::string& path) {
    size_t pos = 0;
    auto skip_space = [&] {
        while (pos < b.size()) {
            if (std::isspace(b[pos])) {
                ++pos;
            } else if (b[pos] == '#') {
                while (pos < b.size() && b[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
    };
    auto next_int = [&](const char* what) {
        skip_space();
        int64_t v = 0;
        bool any = false;
        while (pos < b.size() && b[pos] >= '0' && b[pos] <= '9') {
            v = v * 10 + (b[pos] - '0');
            ++pos;
            any = true;
        }
        if (!any) throw FormatError(path + ": bad PGM " + std::string(what));
        return v;
    };

    if (b.size() < 2 || b[0] != 'P' || b[1] != '5')
        throw FormatError(path + ": not a binary PGM (P5) file");
    pos = 2;
    PgmHeader h;
    h.width = next_int("width");
    h.height = next_int("height");
    int64_t maxval = next_int("maxval");
    if (h.width <= 0 || h.height <= 0) throw FormatError(path + ": implausible frame size");
    if (maxval > 255) throw UnsupportedEncoding(path + ": PGM maxval " + std::to_string(maxval) +
                                                " (only 8-bit is supported)");
    if (maxval < 1) throw FormatError(path + ": bad PGM maxval");
    if (pos >= b.size() || !std::isspace(b[pos]))
        throw FormatError(path + ": malformed PGM header");
    h.data_off = pos + 1;
    return h;
}

}  // namespace

VideoClip read_pgm_dir(const std::string& path, Rational fps) {
    auto files = list_pgm_files(path);
    VideoClip clip;
    clip.fps = fps;
    for (const auto& f : files) {
        auto b = read_file_bytes(f);
        PgmHeader h = parse_pgm_header(b, f);
        if (clip.n_frames == 0) {
            clip.height = h.height;
            clip.width = h.width;
        } else if (h.height != clip.height || h.width != clip.width) {
            throw FormatError(f + ": frame size differs from the first frame");
        }
        const size_t npix = static_cast<size_t>(h.width * h.height);
        if (b.size() - h.data_off < npix) throw FormatError(f + ": truncated pixel data");
        clip.pixels.insert(clip.pixels.end(), b.begin() + static_cast<int64_t>(h.data_off),
                           b.begin() + static_cast<int64_t>(h.data_off + npix));
        ++clip.n_frames;
    }
    return clip;
}

VideoClip read_video(const std::string& path, Rational fps_hint) {
    if (fs::is_directory(path)) return read_pgm_dir(path, fps_hint);
    return read_rvf(path);
}

VideoInfo probe_video(const std::string& path, Rational fps_hint) {
    if (!fs::is_directory(path)) return probe_rvf(path);
    auto files = list_pgm_files(path);
    auto b = read_file_bytes(files.front());
    PgmHeader h = parse_pgm_header(b, files.front());
    VideoInfo info;
    info.height = h.height;
    info.width = h.width;
    info.n_frames = static_cast<int64_t>(files.size());
    info.fps = fps_hint;
    return info;
}

int64_t output_frame_count(int64_t n_src, Rational fps_src, Rational fps_target) {
    // floor(n_src / fps_src * fps_target), exact
    return n_src * fps_src.den * fps_target.num / (static_cast<int64_t>(fps_src.num) * fps_target.den);
}

VideoClip decimate_fps(const VideoClip& clip, Rational fps_target) {
    const int64_t cross_a = static_cast<int64_t>(clip.fps.num) * fps_target.den;
    const int64_t cross_b = static_cast<int64_t>(fps_target.num) * clip.fps.den;
    if (cross_a == cross_b) return clip;

    const int64_t n_out = output_frame_count(clip.n_frames, clip.fps, fps_target);
    VideoClip out;
    out.height = clip.height;
    out.width = clip.width;
    out.n_frames = n_out;
    out.fps = fps_target;
    const int64_t fsize = clip.height * clip.width;
    out.pixels.resize(static_cast<size_t>(n_out * fsize));
    for (int64_t k = 0; k < n_out; ++k) {
        // nearest source frame to t = k / fps_target, rounded half up
        const int64_t num = k * fps_target.den * clip.fps.num;
        const int64_t den = static_cast<int64_t>(fps_target.num) * clip.fps.den;
        int64_t src = (2 * num + den) / (2 * den);
        src = std::min(src, clip.n_frames - 1);
        std::memcpy(out.frame(k), clip.frame(src), static_cast<size_t>(fsize));
    }
    return out;
}

VideoClip resize_bilinear(const VideoClip& clip, int64_t size) {
    if (size <= 0) throw LogicError("resize_bilinear: non-positive size");
    if (clip.height == size && clip.width == size) return clip;

    VideoClip out;
    out.height = size;
    out.width = size;
    out.n_frames = clip.n_frames;
    out.fps = clip.fps;
    out.pixels.resize(static_cast<size_t>(clip.n_frames * size * size));
    const int64_t H = clip.height, W = clip.width;
    for (int64_t k = 0; k < clip.n_frames; ++k) {
        const uint8_t* src = clip.frame(k);
        uint8_t* dst = out.frame(k);
        for (int64_t y = 0; y < size; ++y) {
            const double sy = (y + 0.5) * H / size - 0.5;
            const int64_t y0f = static_cast<int64_t>(std::floor(sy));
            const double fy = sy - y0f;
            const int64_t y0 = std::clamp(y0f, int64_t{0}, H - 1);
            const int64_t y1 = std::clamp(y0f + 1, int64_t{0}, H - 1);
            for (int64_t x = 0; x < size; ++x) {
                const double sx = (x + 0.5) * W / size - 0.5;
                const int64_t x0f = static_cast<int64_t>(std::floor(sx));
                const double fx = sx - x0f;
                const int64_t x0 = std::clamp(x0f, int64_t{0}, W - 1);
                const int64_t x1 = std::clamp(x0f + 1, int64_t{0}, W - 1);
                const double top = (1 - fx) * src[y0 * W + x0] + fx * src[y0 * W + x1];
                const double bot = (1 - fx) * src[y1 * W + x0] + fx * src[y1 * W + x1];
                dst[y * size + x] = static_cast<uint8_t>(std::lround((1 - fy) * top + fy * bot));
            }
        }
    }
    return out;
}

AudioClip read_audio(const std::string& path, int target_rate) {
    return resample_audio(read_wav(path), target_rate);
}

VideoClip read_video_at(const std::string& path, Rational fps_hint, Rational fps_target,
                        int64_t image_size) {
    return resize_bilinear(decimate_fps(read_video(path, fps_hint), fps_target), image_size);
}

}  // namespace acc
