#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "acc/corpus.hpp"
#include "acc/phonology.hpp"
#include "acc/tensor.hpp"

namespace acc {

// Target rates and geometry applied to every clip before example extraction.
struct PipelineParams {
    Rational fps_target = {15, 1};
    int sample_rate = 16000;
    int64_t image_size = 64;
    int channels = 1;  // grayscale replicated across channels when > 1
};

// Samples of audio per video frame, round(sample_rate / fps) half up.
int64_t window_samples(int sample_rate, Rational fps);

struct WindowBounds {
    int64_t lo = 0;
    int64_t hi = 0;  // half-open; indices outside the clip read as zero
};

// Window of exactly W samples centered at round(t * sample_rate).
WindowBounds window_bounds(double t, int sample_rate, int64_t W);
std::vector<real> audio_window(const AudioClip& clip, double t, int64_t W);

// Frame-start times t_k = k / fps.
std::vector<double> frame_times(int64_t n_frames, Rational fps);

// Per-frame class indices for all three dimensions. A frame takes the class
// of the interval containing its midpoint (half-open [start, end)); uncovered
// frames are Silence. mask = 0 marks place-excluded frames, which keep a
// Silence placeholder label; manner and voicing are always labeled.
struct FrameLabels {
    std::array<std::vector<int64_t>, 3> label;
    std::array<std::vector<uint8_t>, 3> mask;
    int64_t n_frames() const { return static_cast<int64_t>(label[0].size()); }
};

FrameLabels label_frames(const Transcript& tr, const PhonemeMap& pm, int64_t n_frames,
                         Rational fps);
// Same labeling at explicit midpoint times, which must be nondecreasing.
FrameLabels label_frames_at(const Transcript& tr, const PhonemeMap& pm,
                            const std::vector<double>& midpoints);

struct Example {
    int64_t utt_index = 0;
    int64_t frame_index = 0;
    Tensor image;             // [channels, S, S], intensities mapped to [-1, 1]
    std::vector<real> audio;  // exactly W samples in [-1, 1]; empty when unused
    std::array<int64_t, 3> label{};
    std::array<uint8_t, 3> mask{};
};

struct Dataset {
    std::vector<Example> examples;
    // [first, count) into examples, one entry per manifest utterance
    std::vector<std::pair<int64_t, int64_t>> utterance_ranges;
    int64_t window = 0;
};

// One example per surviving video frame. Audio/video duration skew beyond
// 0.5 s throws LengthMismatch; skew beyond one frame period truncates to the
// shorter stream with a warning on stderr.
std::vector<Example> build_examples(const Manifest& m, int64_t utt_index, const PhonemeMap& pm,
                                    const PipelineParams& pp, bool want_audio);
Dataset build_dataset(const Manifest& m, const PhonemeMap& pm, const PipelineParams& pp,
                      bool want_audio);

// Optional example cache. The key covers manifest metadata and pipeline
// parameters, not media bytes; regenerate after editing files in place.
uint64_t dataset_cache_key(const Manifest& m, const PipelineParams& pp, bool want_audio);
void save_dataset_cache(const Dataset& d, const std::string& path, uint64_t key);
bool load_dataset_cache(Dataset& d, const std::string& path, uint64_t key);

}  // namespace acc
