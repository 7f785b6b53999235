#include "acc/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "acc/checkpoint.hpp"
#include "json.hpp"

namespace acc {

namespace {

using ordered_json = nlohmann::ordered_json;

const std::vector<std::string> kPolicyNames = {"default", "paper-literal"};

bool contains_id(const std::vector<std::string>& v, const std::string& id) {
    return std::find(v.begin(), v.end(), id) != v.end();
}

void write_json_file(const std::filesystem::path& path, const ordered_json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    const std::string text = j.dump(2) + "\n";
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("short write to " + path.string());
}

}  // namespace

std::vector<Speaker> speaker_roster(const Manifest& m) {
    std::vector<Speaker> out;
    std::unordered_map<std::string, char> seen;
    for (const Utterance& u : m.utterances) {
        auto it = seen.find(u.speaker_id);
        if (it == seen.end()) {
            seen.emplace(u.speaker_id, u.gender);
            out.push_back({u.speaker_id, u.gender});
        } else if (it->second != u.gender) {
            throw DataError("speaker " + u.speaker_id + " is listed with two genders");
        }
    }
    return out;
}

const std::string& fold_policy_name(FoldPolicy p) {
    return kPolicyNames[static_cast<size_t>(p)];
}

FoldPolicy fold_policy_from_name(const std::string& name) {
    for (size_t i = 0; i < kPolicyNames.size(); ++i)
        if (kPolicyNames[i] == name) return static_cast<FoldPolicy>(i);
    throw ParseError("unknown fold policy \"" + name + "\" (expected default or paper-literal)");
}

FoldPlan make_folds(const std::vector<Speaker>& speakers, int k, uint64_t seed,
                    FoldPolicy policy) {
    if (k < 1) throw UsageError("folds: need at least one fold");
    std::unordered_set<std::string> ids;
    std::vector<std::string> males, females;
    for (const Speaker& s : speakers) {
        if (!ids.insert(s.id).second) throw DataError("duplicate speaker id " + s.id);
        if (s.gender == 'M')
            males.push_back(s.id);
        else if (s.gender == 'F')
            females.push_back(s.id);
        else
            throw DataError("speaker " + s.id + " has gender '" + std::string(1, s.gender) +
                            "', expected M or F");
    }
    if (males.size() < 2 || females.size() < 2)
        throw InsufficientSpeakers("fold protocol needs at least 2 speakers per gender, got " +
                                   std::to_string(males.size()) + " male and " +
                                   std::to_string(females.size()) + " female");
    Rng root(seed);
    Rng mr = root.fork(1);
    mr.shuffle(males);
    Rng fr = root.fork(2);
    fr.shuffle(females);

    FoldPlan plan;
    plan.policy = policy;
    const size_t nM = males.size(), nF = females.size();
    for (int i = 0; i < k; ++i) {
        FoldSplit fs;
        fs.test = {males[i % nM], females[i % nF]};
        fs.val = policy == FoldPolicy::PaperLiteral
                     ? fs.test
                     : std::vector<std::string>{males[(i + 1) % nM], females[(i + 1) % nF]};
        for (const Speaker& s : speakers)
            if (!contains_id(fs.test, s.id) && !contains_id(fs.val, s.id))
                fs.train.push_back(s.id);
        plan.folds.push_back(std::move(fs));
    }
    return plan;
}

Split split_of(const FoldPlan& plan, int fold, const Manifest& m, int64_t utt_index) {
    if (fold < 0 || fold >= static_cast<int>(plan.folds.size()))
        throw IndexOutOfRange("fold " + std::to_string(fold) + " of " +
                              std::to_string(plan.folds.size()));
    const FoldSplit& fs = plan.folds[static_cast<size_t>(fold)];
    if (utt_index < 0 || utt_index >= static_cast<int64_t>(m.utterances.size()))
        throw IndexOutOfRange("utterance " + std::to_string(utt_index));
    const Utterance& u = m.utterances[static_cast<size_t>(utt_index)];
    if (plan.policy == FoldPolicy::PaperLiteral) {
        if (contains_id(fs.train, u.speaker_id)) return Split::Train;
        if (!contains_id(fs.test, u.speaker_id))
            throw DataError("speaker " + u.speaker_id + " is not in the fold plan");
        int64_t pos = 0;
        for (int64_t i = 0; i < utt_index; ++i)
            if (m.utterances[static_cast<size_t>(i)].speaker_id == u.speaker_id) ++pos;
        return pos % 2 == 0 ? Split::Val : Split::Test;
    }
    if (contains_id(fs.test, u.speaker_id)) return Split::Test;
    if (contains_id(fs.val, u.speaker_id)) return Split::Val;
    if (contains_id(fs.train, u.speaker_id)) return Split::Train;
    throw DataError("speaker " + u.speaker_id + " is not in the fold plan");
}

SplitIndices split_examples(const Dataset& ds, const Manifest& m, const FoldPlan& plan,
                            int fold) {
    if (ds.utterance_ranges.size() != m.utterances.size())
        throw LengthMismatch("dataset has " + std::to_string(ds.utterance_ranges.size()) +
                             " utterances, manifest has " + std::to_string(m.utterances.size()));
    SplitIndices out;
    for (size_t ui = 0; ui < ds.utterance_ranges.size(); ++ui) {
        const auto [first, count] = ds.utterance_ranges[ui];
        std::vector<size_t>* dst = nullptr;
        switch (split_of(plan, fold, m, static_cast<int64_t>(ui))) {
            case Split::Train: dst = &out.train; break;
            case Split::Val: dst = &out.val; break;
            case Split::Test: dst = &out.test; break;
        }
        for (int64_t i = 0; i < count; ++i) dst->push_back(static_cast<size_t>(first + i));
    }
    return out;
}

std::vector<real> class_frequencies(const Dataset& ds, const std::vector<size_t>& idx,
                                    Dimension dim) {
    std::vector<real> freq(static_cast<size_t>(n_classes(dim)), real(0));
    const auto d = static_cast<size_t>(dim);
    for (size_t e : idx) {
        const Example& ex = ds.examples.at(e);
        if (ex.mask[d]) freq[static_cast<size_t>(ex.label[d])] += 1;
    }
    return freq;
}

Batch make_batch(const Dataset& ds, const std::vector<size_t>& idx, size_t first, size_t count,
                 Dimension dim, bool want_audio) {
    if (count < 1) throw UsageError("batch: need at least one example");
    if (first + count > idx.size())
        throw IndexOutOfRange("batch [" + std::to_string(first) + ", " +
                              std::to_string(first + count) + ") of " +
                              std::to_string(idx.size()) + " indices");
    const Shape img_shape = ds.examples.at(idx[first]).image.shape;
    if (img_shape.size() != 3) throw ShapeMismatch("example image " + shape_str(img_shape));
    Batch b;
    b.images =
        Tensor::zeros({static_cast<int64_t>(count), img_shape[0], img_shape[1], img_shape[2]});
    if (want_audio) b.windows = Tensor::zeros({static_cast<int64_t>(count), ds.window});
    const int64_t img_n = shape_numel(img_shape);
    const auto d = static_cast<size_t>(dim);
    for (size_t i = 0; i < count; ++i) {
        const Example& ex = ds.examples.at(idx[first + i]);
        require_shape(ex.image, img_shape, "batch image");
        std::copy(ex.image.data.begin(), ex.image.data.end(),
                  b.images.data.begin() + static_cast<int64_t>(i) * img_n);
        if (want_audio) {
            if (static_cast<int64_t>(ex.audio.size()) != ds.window)
                throw DataError("example has " + std::to_string(ex.audio.size()) +
                                " audio samples, dataset window is " +
                                std::to_string(ds.window) +
                                " (was the dataset built without audio?)");
            std::copy(ex.audio.begin(), ex.audio.end(),
                      b.windows.data.begin() + static_cast<int64_t>(i) * ds.window);
        }
        b.labels.push_back(static_cast<int>(ex.label[d]));
        b.mask.push_back(ex.mask[d] ? real(1) : real(0));
    }
    return b;
}

void adamw_step(ParamStore& ps, const AdamWConfig& cfg, int64_t t) {
    if (t < 1) throw UsageError("adamw: the step index is 1-based");
    const real bc1 = 1 - static_cast<real>(std::pow(double(cfg.beta1), double(t)));
    const real bc2 = 1 - static_cast<real>(std::pow(double(cfg.beta2), double(t)));
    for (size_t pi = 0; pi < ps.size(); ++pi) {
        Parameter& p = ps[pi];
        if (p.frozen) continue;
        for (int64_t i = 0; i < p.value.numel(); ++i) {
            const real g = p.grad.data[i];
            p.m.data[i] = cfg.beta1 * p.m.data[i] + (1 - cfg.beta1) * g;
            p.v.data[i] = cfg.beta2 * p.v.data[i] + (1 - cfg.beta2) * g * g;
            const real mhat = p.m.data[i] / bc1;
            const real vhat = p.v.data[i] / bc2;
            p.value.data[i] -=
                cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p.value.data[i]);
        }
    }
}

void TrainConfig::validate() const {
    if (epochs < 1) throw UsageError("train: epochs must be >= 1");
    if (batch_size < 1) throw UsageError("train: batch size must be >= 1");
    if (!(lr > 0)) throw UsageError("train: learning rate must be > 0");
    if (weight_decay < 0) throw UsageError("train: weight decay must be >= 0");
    if (fold < 0) throw UsageError("train: fold index must be >= 0");
    if (patience < 0) throw UsageError("train: patience must be >= 0");
}

std::vector<int> predict_examples(const Classifier& clf, const Dataset& ds,
                                  const std::vector<size_t>& idx, int64_t batch_size) {
    if (batch_size < 1) throw UsageError("predict: batch size must be >= 1");
    const Mode mode = clf.config().mode;
    const bool need_audio = mode == Mode::UniA || mode == Mode::Fusion;
    std::vector<int> preds;
    preds.reserve(idx.size());
    for (size_t off = 0; off < idx.size(); off += static_cast<size_t>(batch_size)) {
        const size_t n = std::min<size_t>(static_cast<size_t>(batch_size), idx.size() - off);
        Batch b = make_batch(ds, idx, off, n, clf.config().dim, need_audio);
        const Tensor logits = mode == Mode::Contrast ? clf.predict_contrastive(b.images)
                                                     : clf.predict(b.images, b.windows);
        for (int64_t r = 0; r < logits.shape[0]; ++r) {
            int best = 0;
            for (int c = 1; c < static_cast<int>(logits.shape[1]); ++c)
                if (logits.at(r, c) > logits.at(r, best)) best = c;
            preds.push_back(best);
        }
    }
    return preds;
}

ConfusionMatrix eval_confusion(const Classifier& clf, const Dataset& ds,
                               const std::vector<size_t>& idx, Dimension dim,
                               int64_t batch_size) {
    const std::vector<int> preds = predict_examples(clf, ds, idx, batch_size);
    std::vector<int> labels;
    std::vector<uint8_t> mask;
    const auto d = static_cast<size_t>(dim);
    for (size_t e : idx) {
        labels.push_back(static_cast<int>(ds.examples.at(e).label[d]));
        mask.push_back(ds.examples.at(e).mask[d]);
    }
    return confusion(preds, labels, mask, n_classes(dim));
}

TrainResult train_run(const Dataset& ds, const Manifest& m, const FoldPlan& plan,
                      const ModelConfig& mc, const TrainConfig& tc,
                      const std::filesystem::path& out_dir, uint64_t config_hash) {
    tc.validate();
    mc.validate();
    if (tc.fold >= static_cast<int>(plan.folds.size()))
        throw UsageError("train: fold " + std::to_string(tc.fold) + " of a " +
                         std::to_string(plan.folds.size()) + "-fold plan");
    std::filesystem::create_directories(out_dir);

    const SplitIndices si = split_examples(ds, m, plan, tc.fold);
    const auto d = static_cast<size_t>(mc.dim);
    std::vector<size_t> train_idx;
    for (size_t e : si.train)
        if (ds.examples[e].mask[d]) train_idx.push_back(e);
    if (train_idx.empty())
        throw DataError("training split has no usable frames for " + dim_name(mc.dim));

    const bool has_audio = !ds.examples.empty() && !ds.examples.front().audio.empty();
    const bool needs_audio = mc.mode == Mode::UniA || mc.mode == Mode::Fusion;
    if (needs_audio && !has_audio)
        throw DataError(mode_name(mc.mode) + " training needs audio windows, but the dataset "
                        "was built without them");
    // Contrast trains the alignment term when audio is available and falls
    // back to plain classification when it is not.
    const bool batch_audio = needs_audio || (mc.mode == Mode::Contrast && has_audio);

    ParamStore ps;
    Rng base(tc.seed);
    Rng init_rng = base.fork(1);
    Classifier clf(mc, ds.window, ps, init_rng, class_frequencies(ds, train_idx, mc.dim));

    TrainResult res;
    res.best_checkpoint = out_dir / "best.acck";
    res.final_checkpoint = out_dir / "final.acck";
    res.history = out_dir / "history.jsonl";
    res.summary = out_dir / "run_summary.json";

    std::ofstream hist(res.history, std::ios::binary);
    if (!hist) throw IoError("cannot write " + res.history.string());

    const AdamWConfig opt{tc.lr, tc.weight_decay, real(0.9), real(0.999), real(1e-8)};
    int64_t step = 0;
    real best_f1 = real(-1);
    int best_epoch = 0;
    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        std::vector<size_t> order = train_idx;
        Rng erng = base.fork(2, static_cast<uint64_t>(epoch));
        erng.shuffle(order);

        real epoch_loss = 0;
        int64_t epoch_steps = 0;
        for (size_t off = 0; off < order.size(); off += static_cast<size_t>(tc.batch_size)) {
            const size_t n =
                std::min<size_t>(static_cast<size_t>(tc.batch_size), order.size() - off);
            if (n < static_cast<size_t>(tc.batch_size) && n < 2) break;  // final partial batch
            const Batch batch = make_batch(ds, order, off, n, mc.dim, batch_audio);

            ++step;
            Tape t;
            DropoutCtx dc{tc.seed, static_cast<uint64_t>(step), true, 0};
            const ModelOutput out = clf.forward(t, batch.images, batch.windows, dc);
            const LossParts parts = clf.loss(t, out, batch.labels, batch.mask);
            const real loss = t.val(parts.total).at(0);
            const real loss_cls = t.val(parts.cls).at(0);
            const real loss_cos =
                parts.cos.ok() ? mc.lambda_cos * t.val(parts.cos).at(0) : real(0);

            if (!std::isfinite(loss)) {
                ordered_json dump;
                dump["step"] = step;
                dump["epoch"] = epoch;
                dump["loss"] = loss;          // non-finite values serialize as null
                dump["loss_cls"] = loss_cls;
                dump["loss_cos"] = loss_cos;
                ordered_json rows = ordered_json::array();
                for (size_t i = 0; i < n; ++i) {
                    const Example& ex = ds.examples[order[off + i]];
                    ordered_json row;
                    row["utterance"] = m.utterances[static_cast<size_t>(ex.utt_index)].id;
                    row["frame"] = ex.frame_index;
                    row["label"] = batch.labels[i];
                    rows.push_back(std::move(row));
                }
                dump["batch"] = std::move(rows);
                const auto dump_path = out_dir / "nonfinite_batch.json";
                write_json_file(dump_path, dump);
                throw NonFiniteLoss("step " + std::to_string(step) + " epoch " +
                                    std::to_string(epoch) +
                                    ": loss is not finite; batch dumped to " +
                                    dump_path.string());
            }

            ps.zero_grads();
            t.backward(parts.total);
            adamw_step(ps, opt, step);

            ordered_json rec;
            rec["step"] = step;
            rec["epoch"] = epoch;
            rec["loss"] = loss;
            rec["loss_cls"] = loss_cls;
            rec["loss_cos"] = loss_cos;
            rec["lr"] = tc.lr;
            hist << rec.dump() << "\n";

            epoch_loss += loss;
            ++epoch_steps;
        }
        if (epoch_steps == 0)
            throw DataError("epoch " + std::to_string(epoch) + " produced no batches (" +
                            std::to_string(order.size()) + " usable examples)");

        res.epoch_mean_loss.push_back(epoch_loss / real(epoch_steps));
        const ConfusionMatrix cm = eval_confusion(clf, ds, si.val, mc.dim, tc.batch_size);
        const real val_f1 = macro(prf(cm)).f1;
        res.epoch_val_macro_f1.push_back(val_f1);
        res.epochs_run = epoch;

        if (val_f1 > best_f1) {
            best_f1 = val_f1;
            best_epoch = epoch;
            save_checkpoint(ps, res.best_checkpoint.string(), config_hash);
        }
        if (tc.patience > 0 && epoch - best_epoch >= tc.patience) break;
    }
    hist.flush();
    if (!hist) throw IoError("short write to " + res.history.string());

    res.best_epoch = best_epoch;
    res.best_val_macro_f1 = best_f1;
    save_checkpoint(ps, res.final_checkpoint.string(), config_hash);

    ordered_json summary;
    summary["mode"] = mode_name(mc.mode);
    summary["dimension"] = dim_name(mc.dim);
    summary["fold"] = tc.fold;
    summary["fold_policy"] = fold_policy_name(plan.policy);
    summary["seed"] = tc.seed;
    summary["epochs_run"] = res.epochs_run;
    summary["steps"] = step;
    summary["train_examples"] = train_idx.size();
    summary["val_examples"] = si.val.size();
    summary["test_examples"] = si.test.size();
    summary["best_epoch"] = res.best_epoch;
    summary["best_val_macro_f1"] = res.best_val_macro_f1;
    summary["epoch_mean_loss"] = res.epoch_mean_loss;
    summary["epoch_val_macro_f1"] = res.epoch_val_macro_f1;
    write_json_file(res.summary, summary);
    return res;
}

}  // namespace acc
