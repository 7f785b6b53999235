#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "acc/alignment.hpp"
#include "acc/corpus.hpp"
#include "acc/evaluation.hpp"
#include "acc/model.hpp"
#include "acc/param_store.hpp"

namespace acc {

struct Speaker {
    std::string id;
    char gender = 'M';
};

// Unique speakers in first-appearance order; a speaker listed with two
// genders is a DataError.
std::vector<Speaker> speaker_roster(const Manifest& m);

// Default: per fold, one test speaker and one val speaker of each gender,
// disjoint, remainder trains. PaperLiteral: two held-out speakers serve both
// validation and testing through disjoint utterance halves, which leaks
// speaker identity between the two roles; kept for comparison runs only.
enum class FoldPolicy { Default, PaperLiteral };

const std::string& fold_policy_name(FoldPolicy p);
FoldPolicy fold_policy_from_name(const std::string& name);  // throws ParseError

struct FoldSplit {
    std::vector<std::string> train, val, test;  // speaker ids
};

struct FoldPlan {
    FoldPolicy policy = FoldPolicy::Default;
    std::vector<FoldSplit> folds;
};

// Gender lists are shuffled by seed, then fold i tests (M[i mod nM], F[i mod
// nF]); the default policy validates on the next speaker of each gender.
// Requires at least two speakers per gender.
FoldPlan make_folds(const std::vector<Speaker>& speakers, int k, uint64_t seed,
                    FoldPolicy policy = FoldPolicy::Default);

enum class Split { Train, Val, Test };

// Role of one utterance in one fold. Under PaperLiteral, a held-out
// speaker's utterances alternate by position: even validates, odd tests.
Split split_of(const FoldPlan& plan, int fold, const Manifest& m, int64_t utt_index);

struct SplitIndices {
    std::vector<size_t> train, val, test;  // example indices into the Dataset
};
SplitIndices split_examples(const Dataset& ds, const Manifest& m, const FoldPlan& plan, int fold);

// Occurrence count per class among the unmasked examples.
std::vector<real> class_frequencies(const Dataset& ds, const std::vector<size_t>& idx,
                                    Dimension dim);

struct Batch {
    Tensor images;   // [B,C,S,S]
    Tensor windows;  // [B,W]; empty when audio is not used
    std::vector<int> labels;
    std::vector<real> mask;
};
Batch make_batch(const Dataset& ds, const std::vector<size_t>& idx, size_t first, size_t count,
                 Dimension dim, bool want_audio);

struct AdamWConfig {
    real lr = real(1e-4);
    real weight_decay = real(5e-4);
    real beta1 = real(0.9);
    real beta2 = real(0.999);
    real eps = real(1e-8);
};

// One decoupled-decay update from the gradients accumulated in the store;
// t is the 1-based step index for bias correction. Frozen parameters and
// their moments are untouched.
void adamw_step(ParamStore& ps, const AdamWConfig& cfg, int64_t t);

struct TrainConfig {
    int epochs = 5;
    int64_t batch_size = 16;
    real lr = real(1e-4);
    real weight_decay = real(5e-4);
    uint64_t seed = 0;
    int fold = 0;
    int patience = 0;  // 0 runs all epochs; otherwise stop after this many
                       // epochs without a validation improvement

    void validate() const;  // throws UsageError
};

// Eval-mode argmax predictions; Contrast models use the image-only path.
std::vector<int> predict_examples(const Classifier& clf, const Dataset& ds,
                                  const std::vector<size_t>& idx, int64_t batch_size);
ConfusionMatrix eval_confusion(const Classifier& clf, const Dataset& ds,
                               const std::vector<size_t>& idx, Dimension dim,
                               int64_t batch_size);

struct TrainResult {
    int epochs_run = 0;
    int best_epoch = 0;  // 1-based
    real best_val_macro_f1 = 0;
    std::vector<real> epoch_mean_loss;
    std::vector<real> epoch_val_macro_f1;
    std::filesystem::path best_checkpoint, final_checkpoint, history, summary;
};

// Deterministic training loop: epoch shuffles are keyed by (seed, epoch),
// examples masked for the target dimension are excluded up front, and the
// final partial batch is dropped only when it has fewer than two items.
// Writes history.jsonl (one record per step: step, epoch, loss, loss_cls,
// loss_cos, lr; loss_cos is the lambda-weighted contribution), best.acck,
// final.acck and run_summary.json into out_dir. A non-finite loss dumps the
// offending batch to nonfinite_batch.json and throws NonFiniteLoss.
TrainResult train_run(const Dataset& ds, const Manifest& m, const FoldPlan& plan,
                      const ModelConfig& mc, const TrainConfig& tc,
                      const std::filesystem::path& out_dir, uint64_t config_hash);

}  // namespace acc
