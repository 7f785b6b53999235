#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "acc/corpus.hpp"
#include "acc/rng.hpp"

namespace fs = std::filesystem;

namespace acc {

namespace {

struct SpeakerTraits {
    double f0 = 120;
    int tube_cy = 34;
    int tube_hh = 13;
    double brightness = 112;
    double dx = 0;
};

SpeakerTraits draw_traits(Rng& r, char gender) {
    SpeakerTraits t;
    t.f0 = gender == 'M' ? r.uniform(100, 125) : r.uniform(190, 225);
    t.tube_cy = static_cast<int>(34 + r.range(-3, 3));
    t.tube_hh = static_cast<int>(13 + r.range(-2, 2));
    t.brightness = 112 + static_cast<double>(r.range(-10, 10));
    t.dx = static_cast<double>(r.range(-2, 2));
    return t;
}

// Column fraction of the constriction along the tube, front to back.
double place_fraction(int64_t place_idx) {
    static constexpr double kFrac[] = {0.5, 0.02, 0.14, 0.30, 0.45, 0.60, 0.76, 0.95};
    return kFrac[place_idx];
}

// Tube opening at the constriction, in pixels.
int manner_aperture(int64_t manner_idx) {
    static constexpr int kGap[] = {0, 0, 0, 3, 7, 99};
    return kGap[manner_idx];
}

struct ClassTriple {
    int64_t manner = 0, place = 0, voicing = 0;
    bool place_excluded = false;
};

ClassTriple classes_for(const PhonemeMap& pm, const std::string& sym) {
    const PhonemeClasses& pc = pm.lookup(sym);
    ClassTriple c;
    c.manner = pc.manner;
    c.place = pc.place;
    c.voicing = pc.voicing;
    c.place_excluded = pc.place_excluded;
    return c;
}

uint8_t clamp_px(double v) {
    return static_cast<uint8_t>(std::lround(std::min(255.0, std::max(0.0, v))));
}

void render_frame(uint8_t* px, int S, const SpeakerTraits& spk, const ClassTriple* c,
                  const std::string& sym, Rng& vr) {
    for (int i = 0; i < S * S; ++i) px[i] = clamp_px(16 + 7 * vr.normal());

    const int row0 = std::max(0, spk.tube_cy - spk.tube_hh);
    const int row1 = std::min(S - 1, spk.tube_cy + spk.tube_hh);
    const bool silent = c == nullptr || (c->manner == 0 && c->place == 0 && c->voicing == 0);
    const double bright = silent ? spk.brightness * 0.55 : spk.brightness;
    for (int y = row0; y <= row1; ++y)
        for (int x = 4; x < S - 4; ++x) px[y * S + x] = clamp_px(bright + 5 * vr.normal());

    if (silent) return;

    if (c->place_excluded) {
        // open vocal tract with a symbol-dependent tongue hump
        const double frac = static_cast<double>(fnv1a64(strip_stress(sym)) % 32) / 31.0;
        const int hx = static_cast<int>(std::lround(8 + frac * (S - 20)));
        for (int y = std::max(row0, row1 - 4); y <= row1; ++y)
            for (int x = std::max(4, hx - 5); x <= std::min(S - 5, hx + 5); ++x)
                px[y * S + x] = clamp_px(bright * 0.45 + 4 * vr.normal());
    } else if (c->place > 0) {
        const double wobble = vr.uniform(-1, 1);
        const int xc = static_cast<int>(
            std::lround(6 + place_fraction(c->place) * (S - 12) + spk.dx + wobble));
        const int gap = manner_aperture(c->manner);
        const int gap_lo = spk.tube_cy - gap / 2;
        const int gap_hi = gap_lo + gap - 1;
        for (int y = row0; y <= row1; ++y) {
            if (y >= gap_lo && y <= gap_hi) continue;
            for (int x = std::max(4, xc - 2); x <= std::min(S - 5, xc + 2); ++x)
                px[y * S + x] = clamp_px(28 + 4 * vr.normal());
        }
    }

    if (c->manner == 2) {  // nasal: lowered velum blob above the tube
        for (int y = 4; y <= 12; ++y)
            for (int x = 50; x <= 58; ++x) {
                const double d2 = (y - 8.0) * (y - 8.0) + (x - 54.0) * (x - 54.0);
                if (d2 <= 20.0) px[y * S + x] = clamp_px(185 + 5 * vr.normal());
            }
    }

    if (c->voicing > 0) {
        const double level = c->voicing == 2 ? 205 : 70;
        for (int y = 58; y <= 65 && y < S; ++y)
            for (int x = 3; x <= 12; ++x) px[y * S + x] = clamp_px(level + 6 * vr.normal());
    }
}

struct AudioScratch {
    std::vector<double> buf;
    int sr = 20000;
};

void render_phone_audio(AudioScratch& a, double start, double end, const ClassTriple& c,
                        const std::string& sym, const SpeakerTraits& spk, Rng& ar) {
    const int sr = a.sr;
    int64_t s0 = static_cast<int64_t>(std::lround(start * sr));
    int64_t s1 = static_cast<int64_t>(std::lround(end * sr));
    s0 = std::clamp<int64_t>(s0, 0, static_cast<int64_t>(a.buf.size()));
    s1 = std::clamp<int64_t>(s1, s0, static_cast<int64_t>(a.buf.size()));
    const int64_t n = s1 - s0;
    if (n <= 0) return;

    const double f0 = spk.f0;
    const bool voiced = c.voicing == 2;
    const double pf = c.place > 0 ? place_fraction(c.place) : 0.5;
    const double alpha = 0.10 + 0.78 * pf;
    const double vfrac = static_cast<double>(fnv1a64(strip_stress(sym)) % 16) / 15.0;

    auto envelope = [n](int64_t i) {
        const double ramp = 120;
        double e = 1.0;
        if (i < ramp) e = i / ramp;
        const double left = static_cast<double>(n - 1 - i);
        if (left < ramp) e = std::min(e, left / ramp);
        return e;
    };
    auto harmonics = [&](int64_t gi, const double* amps, int na) {
        const double t = static_cast<double>(gi) / sr;
        double v = 0;
        for (int k = 0; k < na; ++k) v += amps[k] * std::sin(2 * M_PI * (k + 1) * f0 * t);
        return v;
    };

    double lp = 0;
    if (c.manner == 5 || c.manner == 4) {  // vowel or approximant
        const double va[6] = {0.50, 0.28 + 0.25 * vfrac, 0.18, 0.10, 0.06, 0.035};
        const double aa[4] = {0.42, 0.20, 0.09, 0.04};
        const double scale = c.manner == 5 ? 0.55 : 0.50;
        const int na = c.manner == 5 ? 6 : 4;
        for (int64_t i = 0; i < n; ++i)
            a.buf[s0 + i] = scale * envelope(i) * harmonics(s0 + i, c.manner == 5 ? va : aa, na);
    } else if (c.manner == 2) {  // nasal: murmur, little high-frequency energy
        const double na_[3] = {0.55, 0.16, 0.05};
        for (int64_t i = 0; i < n; ++i)
            a.buf[s0 + i] = 0.50 * envelope(i) * harmonics(s0 + i, na_, 3);
    } else if (c.manner == 3) {  // fricative: place-colored noise
        const double ha[2] = {0.28, 0.12};
        for (int64_t i = 0; i < n; ++i) {
            lp += alpha * (ar.uniform(-1, 1) - lp);
            double v = (voiced ? 0.22 : 0.30) * lp * 3.0;
            if (voiced) v += 0.5 * harmonics(s0 + i, ha, 2);
            a.buf[s0 + i] = envelope(i) * v;
        }
    } else if (c.manner == 1) {  // stop: closure, burst, release
        const int64_t closure = static_cast<int64_t>(0.55 * n);
        const int64_t burst = std::min<int64_t>(static_cast<int64_t>(0.018 * sr), n - closure);
        for (int64_t i = 0; i < closure; ++i) {
            const double t = static_cast<double>(s0 + i) / sr;
            a.buf[s0 + i] = voiced ? 0.07 * std::sin(2 * M_PI * f0 * t)
                                   : 0.002 * ar.uniform(-1, 1);
        }
        for (int64_t i = 0; i < burst; ++i) {
            lp += alpha * (ar.uniform(-1, 1) - lp);
            const double decay = std::exp(-3.0 * i / std::max<int64_t>(1, burst));
            a.buf[s0 + closure + i] = 0.55 * decay * lp * 3.0;
        }
        const double ha[2] = {0.30, 0.12};
        for (int64_t i = closure + burst; i < n; ++i) {
            const double e = envelope(i);
            a.buf[s0 + i] = voiced ? 0.5 * e * harmonics(s0 + i, ha, 2)
                                   : 0.10 * e * ar.uniform(-1, 1);
        }
    }
}

std::string pick_symbol(Rng& r, const std::vector<std::string>& vowels,
                        const std::vector<std::string>& consonants) {
    if (!vowels.empty() && r.bernoulli(0.42)) {
        std::string s = vowels[r.below(vowels.size())];
        s += static_cast<char>('0' + r.below(3));  // stress digit, stripped downstream
        return s;
    }
    return consonants[r.below(consonants.size())];
}

}  // namespace

Manifest synthesize_corpus(const SynthSpec& spec, const std::string& out_dir,
                           const PhonemeMap& pm) {
    if (spec.n_speakers < 1 || spec.n_male < 0 || spec.n_male > spec.n_speakers)
        throw UsageError("synth: speaker counts out of range");
    if (spec.sentences_per_speaker < 1 || spec.phones_per_sentence < 1)
        throw UsageError("synth: sentence shape out of range");
    if (spec.image_size < 32) throw UsageError("synth: image size must be at least 32");
    if (spec.sample_rate < 8000) throw UsageError("synth: sample rate must be at least 8000");

    std::vector<std::string> vowels, consonants;
    const int vowel_idx = class_index(Dimension::Manner, "Vowel");
    for (const auto& sym : pm.inventory()) {
        if (sym == kSil) continue;
        if (pm.lookup(sym).manner == vowel_idx)
            vowels.push_back(sym);
        else
            consonants.push_back(sym);
    }
    if (consonants.empty()) throw UsageError("synth: phoneme map has no consonants");

    fs::create_directories(out_dir);
    Rng root(spec.seed);
    Manifest m;
    m.dir = out_dir;

    const int S = spec.image_size;
    for (int spk = 0; spk < spec.n_speakers; ++spk) {
        char spk_name[16];
        std::snprintf(spk_name, sizeof spk_name, "spk%02d", spk);
        const char gender = spk < spec.n_male ? 'M' : 'F';
        fs::create_directories(fs::path(out_dir) / spk_name);

        Rng anat_rng = root.fork(static_cast<uint64_t>(spk), 0);
        const SpeakerTraits traits = draw_traits(anat_rng, gender);

        for (int sent = 0; sent < spec.sentences_per_speaker; ++sent) {
            Rng u_rng = root.fork(static_cast<uint64_t>(spk) + 1, static_cast<uint64_t>(sent) + 1);
            Rng t_rng = u_rng.fork(1);
            Rng a_rng = u_rng.fork(2);
            Rng v_rng = u_rng.fork(3);

            Transcript tr;
            double t = t_rng.uniform(0.12, 0.28);
            if (t_rng.bernoulli(0.35)) tr.intervals.push_back({0.0, t, std::string(kSil)});
            for (int p = 0; p < spec.phones_per_sentence; ++p) {
                const double dur = t_rng.uniform(0.14, 0.32);
                tr.intervals.push_back({t, t + dur, pick_symbol(t_rng, vowels, consonants)});
                t += dur;
                if (t_rng.bernoulli(0.12)) {
                    const double g = t_rng.uniform(0.05, 0.14);
                    if (t_rng.bernoulli(0.5)) tr.intervals.push_back({t, t + g, std::string(kSil)});
                    t += g;
                }
            }
            const double total = t + t_rng.uniform(0.12, 0.28);

            AudioScratch audio;
            audio.sr = spec.sample_rate;
            audio.buf.assign(static_cast<size_t>(std::lround(total * spec.sample_rate)), 0.0);
            for (double& v : audio.buf) v = 0.003 * a_rng.uniform(-1, 1);
            for (const auto& iv : tr.intervals) {
                if (iv.phoneme == kSil) continue;
                render_phone_audio(audio, iv.start_s, iv.end_s, classes_for(pm, iv.phoneme),
                                   iv.phoneme, traits, a_rng);
            }
            AudioClip clip;
            clip.sample_rate = spec.sample_rate;
            clip.samples.resize(audio.buf.size());
            for (size_t i = 0; i < audio.buf.size(); ++i) {
                const double v = std::clamp(audio.buf[i], -1.0, 1.0);
                clip.samples[i] = static_cast<int16_t>(std::lround(v * 30000));
            }

            VideoClip video;
            video.height = S;
            video.width = S;
            video.fps = spec.fps;
            video.n_frames =
                static_cast<int64_t>(std::floor(total * spec.fps.num / spec.fps.den));
            video.pixels.resize(static_cast<size_t>(video.n_frames * S * S));
            for (int64_t k = 0; k < video.n_frames; ++k) {
                const double tm = (k + 0.5) * spec.fps.den / spec.fps.num;
                const Interval* hit = nullptr;
                for (const auto& iv : tr.intervals)
                    if (tm >= iv.start_s && tm < iv.end_s) {
                        hit = &iv;
                        break;
                    }
                ClassTriple c;
                const bool have = hit != nullptr && hit->phoneme != kSil;
                if (have) c = classes_for(pm, hit->phoneme);
                render_frame(video.frame(k), S, traits, have ? &c : nullptr,
                             have ? hit->phoneme : std::string(), v_rng);
            }

            Utterance u;
            u.speaker_id = spk_name;
            char utt_name[32];
            std::snprintf(utt_name, sizeof utt_name, "%s_u%02d", spk_name, sent);
            u.id = utt_name;
            u.gender = gender;
            u.fps = spec.fps;
            u.sample_rate = spec.sample_rate;
            const std::string base = std::string(spk_name) + "/" + utt_name;
            u.video_path = base + ".rvf";
            u.audio_path = base + ".wav";
            u.transcript_path = base + ".tsv";
            write_rvf(video, m.path(u.video_path));
            write_wav(clip, m.path(u.audio_path));
            write_transcript(tr, m.path(u.transcript_path));
            m.utterances.push_back(std::move(u));
        }
    }

    save_manifest(m, std::string(out_dir) + "/manifest.json");
    return m;
}

}  // namespace acc
