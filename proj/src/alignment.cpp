#include "acc/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace acc {

int64_t window_samples(int sample_rate, Rational fps) {
    // round(sample_rate * den / num) half up, in integers
    const int64_t num = fps.num, den = fps.den;
    return (2 * static_cast<int64_t>(sample_rate) * den + num) / (2 * num);
}

WindowBounds window_bounds(double t, int sample_rate, int64_t W) {
    const int64_t c = std::llround(t * sample_rate);
    WindowBounds b;
    b.lo = c - W / 2;
    b.hi = b.lo + W;
    return b;
}

std::vector<real> audio_window(const AudioClip& clip, double t, int64_t W) {
    const WindowBounds b = window_bounds(t, clip.sample_rate, W);
    std::vector<real> out(static_cast<size_t>(W), real(0));
    const int64_t n = static_cast<int64_t>(clip.samples.size());
    const int64_t lo = std::max<int64_t>(b.lo, 0);
    const int64_t hi = std::min<int64_t>(b.hi, n);
    for (int64_t i = lo; i < hi; ++i)
        out[static_cast<size_t>(i - b.lo)] =
            static_cast<real>(clip.samples[static_cast<size_t>(i)]) / real(32768);
    return out;
}

std::vector<double> frame_times(int64_t n_frames, Rational fps) {
    std::vector<double> t(static_cast<size_t>(n_frames));
    for (int64_t k = 0; k < n_frames; ++k)
        t[static_cast<size_t>(k)] = static_cast<double>(k) * fps.den / fps.num;
    return t;
}

FrameLabels label_frames_at(const Transcript& tr, const PhonemeMap& pm,
                            const std::vector<double>& midpoints) {
    const int64_t n_frames = static_cast<int64_t>(midpoints.size());
    FrameLabels out;
    for (auto& v : out.label) v.assign(static_cast<size_t>(n_frames), 0);
    for (auto& v : out.mask) v.assign(static_cast<size_t>(n_frames), 1);

    size_t idx = 0;
    const auto& ivs = tr.intervals;
    for (int64_t k = 0; k < n_frames; ++k) {
        const double tm = midpoints[static_cast<size_t>(k)];
        while (idx < ivs.size() && ivs[idx].end_s <= tm) ++idx;
        if (idx >= ivs.size() || tm < ivs[idx].start_s) continue;  // gap: Silence everywhere

        const PhonemeClasses& c = pm.lookup(ivs[idx].phoneme);
        out.label[0][static_cast<size_t>(k)] = c.manner;
        out.label[2][static_cast<size_t>(k)] = c.voicing;
        if (c.place_excluded)
            out.mask[1][static_cast<size_t>(k)] = 0;
        else
            out.label[1][static_cast<size_t>(k)] = c.place;
    }
    return out;
}

FrameLabels label_frames(const Transcript& tr, const PhonemeMap& pm, int64_t n_frames,
                         Rational fps) {
    std::vector<double> mids(static_cast<size_t>(n_frames));
    for (int64_t k = 0; k < n_frames; ++k)
        mids[static_cast<size_t>(k)] = (k + 0.5) * fps.den / fps.num;
    return label_frames_at(tr, pm, mids);
}

std::vector<Example> build_examples(const Manifest& m, int64_t utt_index, const PhonemeMap& pm,
                                    const PipelineParams& pp, bool want_audio) {
    const Utterance& u = m.utterances.at(static_cast<size_t>(utt_index));
    VideoClip native = read_video(m.path(u.video_path), u.fps);
    Transcript tr = parse_transcript(m.path(u.transcript_path));

    AudioClip audio;
    double common = native.duration();
    if (want_audio) {
        audio = read_audio(m.path(u.audio_path), pp.sample_rate);
        const double vd = native.duration();
        const double ad = audio.duration();
        const double diff = std::abs(vd - ad);
        if (diff > 0.5)
            throw LengthMismatch(u.id + ": audio is " + std::to_string(ad) +
                                 " s but video is " + std::to_string(vd) + " s");
        const double frame_period = static_cast<double>(native.fps.den) / native.fps.num;
        if (diff > frame_period) {
            common = std::min(vd, ad);
            std::cerr << "warning: " << u.id << ": audio/video lengths differ by " << diff
                      << " s; truncating to " << common << " s\n";
        }
    }

    VideoClip clip = resize_bilinear(decimate_fps(native, pp.fps_target), pp.image_size);
    int64_t n_frames = clip.n_frames;
    if (common < native.duration()) {
        const int64_t cap = static_cast<int64_t>(common * pp.fps_target.num / pp.fps_target.den);
        n_frames = std::min(n_frames, cap);
    }

    const FrameLabels labels = label_frames(tr, pm, n_frames, pp.fps_target);
    const int64_t W = window_samples(pp.sample_rate, pp.fps_target);
    const int64_t S = pp.image_size;
    const int64_t C = pp.channels;

    std::vector<Example> out;
    out.reserve(static_cast<size_t>(n_frames));
    for (int64_t k = 0; k < n_frames; ++k) {
        Example ex;
        ex.utt_index = utt_index;
        ex.frame_index = k;
        ex.image = Tensor::zeros({C, S, S});
        const uint8_t* src = clip.frame(k);
        for (int64_t i = 0; i < S * S; ++i) {
            const real v = static_cast<real>(src[i]) / real(255) * real(2) - real(1);
            for (int64_t ch = 0; ch < C; ++ch) ex.image.data[static_cast<size_t>(ch * S * S + i)] = v;
        }
        if (want_audio) {
            const double t = static_cast<double>(k) * pp.fps_target.den / pp.fps_target.num;
            ex.audio = audio_window(audio, t, W);
        }
        for (size_t d = 0; d < 3; ++d) {
            ex.label[d] = labels.label[d][static_cast<size_t>(k)];
            ex.mask[d] = labels.mask[d][static_cast<size_t>(k)];
        }
        out.push_back(std::move(ex));
    }
    return out;
}

Dataset build_dataset(const Manifest& m, const PhonemeMap& pm, const PipelineParams& pp,
                      bool want_audio) {
    Dataset d;
    d.window = window_samples(pp.sample_rate, pp.fps_target);
    for (int64_t i = 0; i < static_cast<int64_t>(m.utterances.size()); ++i) {
        auto ex = build_examples(m, i, pm, pp, want_audio);
        d.utterance_ranges.emplace_back(static_cast<int64_t>(d.examples.size()),
                                        static_cast<int64_t>(ex.size()));
        for (auto& e : ex) d.examples.push_back(std::move(e));
    }
    return d;
}

uint64_t dataset_cache_key(const Manifest& m, const PipelineParams& pp, bool want_audio) {
    std::string s = "dataset-cache-v1";
    for (const auto& u : m.utterances) {
        s += '\x1f';
        s += u.id;
        s += '\x1f';
        s += u.video_path;
        s += '\x1f';
        s += u.audio_path;
        s += '\x1f';
        s += u.transcript_path;
        s += '\x1f';
        s += std::to_string(u.fps.num) + "/" + std::to_string(u.fps.den);
        s += '\x1f';
        s += std::to_string(u.sample_rate);
    }
    s += '\x1e';
    s += std::to_string(pp.fps_target.num) + "/" + std::to_string(pp.fps_target.den);
    s += '\x1f';
    s += std::to_string(pp.sample_rate);
    s += '\x1f';
    s += std::to_string(pp.image_size);
    s += '\x1f';
    s += std::to_string(pp.channels);
    s += '\x1f';
    s += want_audio ? "a1" : "a0";
    return fnv1a64(s);
}

namespace {

constexpr char kCacheMagic[4] = {'A', 'C', 'D', 'S'};
constexpr uint32_t kCacheVersion = 1;

template <typename T>
void put_raw(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
bool get_raw(std::istream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return static_cast<bool>(in);
}

}  // namespace

void save_dataset_cache(const Dataset& d, const std::string& path, uint64_t key) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(kCacheMagic, 4);
    put_raw(out, kCacheVersion);
    const uint32_t real_size = sizeof(real);
    put_raw(out, real_size);
    put_raw(out, key);
    put_raw(out, d.window);
    const uint64_t n = d.examples.size();
    put_raw(out, n);
    for (const auto& ex : d.examples) {
        put_raw(out, ex.utt_index);
        put_raw(out, ex.frame_index);
        const uint64_t rank = ex.image.shape.size();
        put_raw(out, rank);
        for (int64_t dim : ex.image.shape) put_raw(out, dim);
        out.write(reinterpret_cast<const char*>(ex.image.data.data()),
                  static_cast<std::streamsize>(ex.image.data.size() * sizeof(real)));
        const uint64_t na = ex.audio.size();
        put_raw(out, na);
        out.write(reinterpret_cast<const char*>(ex.audio.data()),
                  static_cast<std::streamsize>(na * sizeof(real)));
        for (size_t i = 0; i < 3; ++i) put_raw(out, ex.label[i]);
        for (size_t i = 0; i < 3; ++i) put_raw(out, ex.mask[i]);
    }
    const uint64_t nr = d.utterance_ranges.size();
    put_raw(out, nr);
    for (const auto& [first, count] : d.utterance_ranges) {
        put_raw(out, first);
        put_raw(out, count);
    }
    if (!out) throw IoError("cannot write " + path);
}

bool load_dataset_cache(Dataset& d, const std::string& path, uint64_t key) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCacheMagic, 4) != 0) return false;
    uint32_t version = 0, real_size = 0;
    uint64_t file_key = 0;
    if (!get_raw(in, version) || version != kCacheVersion) return false;
    if (!get_raw(in, real_size) || real_size != sizeof(real)) return false;
    if (!get_raw(in, file_key) || file_key != key) return false;

    Dataset loaded;
    uint64_t n = 0;
    if (!get_raw(in, loaded.window) || !get_raw(in, n)) return false;
    loaded.examples.resize(n);
    for (auto& ex : loaded.examples) {
        uint64_t rank = 0;
        if (!get_raw(in, ex.utt_index) || !get_raw(in, ex.frame_index) || !get_raw(in, rank) ||
            rank > 8)
            throw FormatError(path + ": truncated example cache");
        Shape shape(rank);
        for (auto& dim : shape)
            if (!get_raw(in, dim)) throw FormatError(path + ": truncated example cache");
        ex.image = Tensor::zeros(shape);
        in.read(reinterpret_cast<char*>(ex.image.data.data()),
                static_cast<std::streamsize>(ex.image.data.size() * sizeof(real)));
        uint64_t na = 0;
        if (!in || !get_raw(in, na)) throw FormatError(path + ": truncated example cache");
        ex.audio.resize(na);
        in.read(reinterpret_cast<char*>(ex.audio.data()),
                static_cast<std::streamsize>(na * sizeof(real)));
        for (size_t i = 0; i < 3; ++i)
            if (!get_raw(in, ex.label[i])) throw FormatError(path + ": truncated example cache");
        for (size_t i = 0; i < 3; ++i)
            if (!get_raw(in, ex.mask[i])) throw FormatError(path + ": truncated example cache");
    }
    uint64_t nr = 0;
    if (!get_raw(in, nr)) throw FormatError(path + ": truncated example cache");
    loaded.utterance_ranges.resize(nr);
    for (auto& [first, count] : loaded.utterance_ranges)
        if (!get_raw(in, first) || !get_raw(in, count))
            throw FormatError(path + ": truncated example cache");
    d = std::move(loaded);
    return true;
}

Histogram class_histogram(const Manifest& m, Dimension dim, const PhonemeMap& pm,
                          Rational fps_target) {
    const size_t di = static_cast<size_t>(dim);
    Histogram h;
    h.dim = dim;
    const auto& names = classes(dim);
    h.rows.resize(names.size());
    for (size_t i = 0; i < names.size(); ++i) h.rows[i].name = names[i];

    for (const auto& u : m.utterances) {
        const VideoInfo info = probe_video(m.path(u.video_path), u.fps);
        const int64_t n_out = output_frame_count(info.n_frames, info.fps, fps_target);
        const Transcript tr = parse_transcript(m.path(u.transcript_path));
        const FrameLabels labels = label_frames(tr, pm, n_out, fps_target);
        for (int64_t k = 0; k < n_out; ++k) {
            ++h.total;
            if (!labels.mask[di][static_cast<size_t>(k)])
                ++h.excluded;
            else
                ++h.rows[static_cast<size_t>(labels.label[di][static_cast<size_t>(k)])].count;
        }
    }
    for (auto& row : h.rows)
        row.pct = h.total > 0 ? 100.0 * static_cast<double>(row.count) / h.total : 0.0;
    return h;
}

}  // namespace acc
