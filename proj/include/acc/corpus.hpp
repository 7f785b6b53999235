#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "acc/common.hpp"
#include "acc/phonology.hpp"

namespace acc {

// Frame rates are kept rational (23.18 fps is 2318/100) so frame counts and
// decimation indices can be computed in exact integer arithmetic.
struct Rational {
    uint32_t num = 15;
    uint32_t den = 1;
    double value() const { return static_cast<double>(num) / den; }
    bool operator==(const Rational&) const = default;
};

struct Utterance {
    std::string id;
    std::string speaker_id;
    char gender = 'M';  // 'M' or 'F'
    std::string video_path;  // relative to the manifest directory
    std::string audio_path;
    std::string transcript_path;
    Rational fps;
    int sample_rate = 20000;
};

// Which referenced files a consumer actually opens. Video-only runs must
// stay loadable when the audio files are gone.
struct Needs {
    bool video = true;
    bool audio = true;
    bool transcript = true;
};

struct Manifest {
    std::string dir;  // directory containing the manifest file
    std::vector<Utterance> utterances;

    std::string path(const std::string& rel) const {
        if (!rel.empty() && rel.front() == '/') return rel;
        return dir.empty() ? rel : dir + "/" + rel;
    }
};

Manifest load_manifest(const std::string& path, const Needs& needs = {});
void save_manifest(const Manifest& m, const std::string& path);

struct Interval {
    double start_s = 0;
    double end_s = 0;
    std::string phoneme;
};

// Sorted, non-overlapping intervals; gaps are implicit silence.
struct Transcript {
    std::vector<Interval> intervals;
    double end_time() const { return intervals.empty() ? 0 : intervals.back().end_s; }
};

Transcript parse_transcript(const std::string& path);
Transcript parse_transcript_text(const std::string& text, const std::string& origin);
void write_transcript(const Transcript& t, const std::string& path);

struct AudioClip {
    std::vector<int16_t> samples;
    int sample_rate = 16000;
    double duration() const {
        return static_cast<double>(samples.size()) / sample_rate;
    }
};

AudioClip read_wav(const std::string& path);
void write_wav(const AudioClip& clip, const std::string& path);
// Windowed-sinc resampler (64-tap Kaiser, beta = 8); pass-through when the
// rates already match.
AudioClip resample_audio(const AudioClip& clip, int target_rate);

struct VideoClip {
    int64_t height = 0;
    int64_t width = 0;
    int64_t n_frames = 0;
    Rational fps;
    std::vector<uint8_t> pixels;  // n_frames * height * width, row-major

    const uint8_t* frame(int64_t k) const { return pixels.data() + k * height * width; }
    uint8_t* frame(int64_t k) { return pixels.data() + k * height * width; }
    double duration() const { return n_frames * fps.den / static_cast<double>(fps.num); }
};

struct VideoInfo {
    int64_t height = 0;
    int64_t width = 0;
    int64_t n_frames = 0;
    Rational fps;
};

VideoClip read_rvf(const std::string& path);
void write_rvf(const VideoClip& clip, const std::string& path);
VideoInfo probe_rvf(const std::string& path);

// A directory of P5 PGM files (sorted by name) is accepted as a video too;
// the frame rate then comes from the manifest.
VideoClip read_pgm_dir(const std::string& path, Rational fps);
VideoClip read_video(const std::string& path, Rational fps_hint);
VideoInfo probe_video(const std::string& path, Rational fps_hint);

// Frames surviving decimation to the target rate: floor(duration * target),
// computed exactly in integers.
int64_t output_frame_count(int64_t n_src, Rational fps_src, Rational fps_target);
VideoClip decimate_fps(const VideoClip& clip, Rational fps_target);
VideoClip resize_bilinear(const VideoClip& clip, int64_t size);

// Convenience wrappers applying the full preprocessing chain.
AudioClip read_audio(const std::string& path, int target_rate);
VideoClip read_video_at(const std::string& path, Rational fps_hint, Rational fps_target,
                        int64_t image_size);

struct SynthSpec {
    int n_speakers = 10;
    int n_male = 5;
    int sentences_per_speaker = 6;
    int phones_per_sentence = 14;
    Rational fps = {2318, 100};  // native camera rate; the pipeline resamples
    int sample_rate = 20000;
    int image_size = 68;
    uint64_t seed = 7;
};

// Deterministic synthetic corpus: a vocal-tract cartoon whose constriction
// location encodes place, aperture encodes manner, and a glottis patch
// encodes voicing, with matching class-dependent audio. Writes video, audio,
// transcripts, and a manifest under out_dir; byte-identical for equal specs.
Manifest synthesize_corpus(const SynthSpec& spec, const std::string& out_dir,
                           const PhonemeMap& pm);

struct HistogramRow {
    std::string name;
    int64_t count = 0;
    double pct = 0;  // of all frames, including the excluded bucket
};

struct Histogram {
    Dimension dim;
    std::vector<HistogramRow> rows;  // one per class, class order
    int64_t excluded = 0;            // place-excluded frames, reported separately
    int64_t total = 0;               // all frames = class counts + excluded
};

// Label every frame of every utterance at the target rate and tally.
Histogram class_histogram(const Manifest& m, Dimension dim, const PhonemeMap& pm,
                          Rational fps_target);

}  // namespace acc
