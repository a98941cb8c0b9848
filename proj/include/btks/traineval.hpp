#pragma once

#include "btks/bicnet.hpp"
#include "btks/synthdata.hpp"
#include "btks/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <vector>

namespace btks {

struct TrainConfig {
    double lr = 3.5e-4;
    double weight_decay = 5e-4;
    std::size_t decay_every = 40; // epochs
    double decay_factor = 0.1;
    std::size_t epochs = 20;
    double lambda_div = 1.0;
    double triplet_margin = 0.3;
    std::size_t identities_per_batch = 4;  // P
    std::size_t segments_per_identity = 2; // S
    std::size_t passes_per_epoch = 4;      // round-robin passes over the training identities
    std::size_t stride = 4;                // frame stride inside a sampled segment
    bool augment = true;
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base = {});

// lr * decay_factor^(epoch / decay_every), epochs counted from 0.
double learning_rate(const TrainConfig& cfg, std::size_t epoch);

template <typename T>
struct LossTerms {
    Tensor<T> total;
    T ce = 0;
    T triplet = 0;
    T divergence = 0;
};

// Batch-hard triplet on L2-normalized features with Euclidean distance.
// Ties go to the lowest batch index.
template <typename T>
Tensor<T> batch_hard_triplet(const Tensor<T>& features, const std::vector<std::size_t>& labels, T margin);

// CE(logits) + triplet(features) + lambda_div * divergence.
template <typename T>
LossTerms<T> total_loss(const Tensor<T>& features, const Tensor<T>& logits, const std::vector<std::size_t>& labels,
                        const Tensor<T>& divergence, const TrainConfig& cfg);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0; // L2, added to the gradient
};

template <typename T>
class Adam {
public:
    Adam(std::vector<Tensor<T>> params, AdamConfig cfg);
    void step(double lr);
    std::size_t steps() const { return t_; }

private:
    std::vector<Tensor<T>> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamConfig cfg_;
    std::size_t t_ = 0;
};

// Model outputs for the consecutive N-frame segments of a tracklet [L, 3, H, W].
BiCnetOutput<float> forward_tracklet(const BiCnetModel<float>& model, const Tensor<float>& frames);

// Mean over consecutive non-overlapping N-frame segments of the aggregated
// feature; trailing frames are dropped. frames [L, 3, H, W], resized to the
// model input when needed.
Tensor<float> extract_video_feature(const Tensor<float>& frames, const BiCnetModel<float>& model);

struct RetrievalResult {
    double mAP = 0;
    std::vector<double> cmc;          // cmc[k] = fraction of queries matched within the top k+1
    std::vector<double> average_precision; // per evaluated query
    std::size_t excluded_queries = 0; // identity absent from the gallery
};

// Rows of `query` and `gallery` are features; ranking by ascending cosine distance,
// ties by gallery index.
RetrievalResult evaluate_retrieval(const std::vector<std::vector<float>>& query,
                                   const std::vector<std::size_t>& query_labels,
                                   const std::vector<std::vector<float>>& gallery,
                                   const std::vector<std::size_t>& gallery_labels);

struct BaselineEstimate {
    double mean = 0;
    double stddev = 0;
    std::size_t trials = 0;
};

// mAP of i.i.d. Gaussian features over `trials` draws.
BaselineEstimate random_feature_baseline(const std::vector<std::size_t>& query_labels,
                                         const std::vector<std::size_t>& gallery_labels, std::size_t dim,
                                         std::size_t trials, std::uint64_t seed);

struct AttentionSimilarity {
    double detail = 1;
    double context = 1;
    double mean = 1; // average over the branches present
};

// Mean pairwise cosine of DAO maps over the consecutive segments of `tracklets`.
AttentionSimilarity attention_similarity(const BiCnetModel<float>& model, const Dataset& data,
                                         const std::vector<std::size_t>& tracklets);

struct Evaluation {
    RetrievalResult retrieval;
    BaselineEstimate baseline;
    AttentionSimilarity attention;
};

Evaluation evaluate(const BiCnetModel<float>& model, const Dataset& data, std::size_t baseline_trials = 200,
                    std::uint64_t seed = 0);
nlohmann::json to_json(const Evaluation& e);

struct EpochLog {
    std::size_t epoch = 0;
    double lr = 0;
    std::size_t steps = 0;
    double loss = 0;
    double ce = 0;
    double triplet = 0;
    double divergence = 0;
    double attention_cosine_detail = 0;
    double attention_cosine_context = 0;
};
nlohmann::json to_json(const EpochLog& log);

// Trains on the dataset's train split. The model needs a classifier head sized
// to the number of training identities. `on_epoch` runs after every epoch.
// A non-finite loss throws VerificationError; the message carries the step state.
std::vector<EpochLog> train(BiCnetModel<float>& model, const Dataset& data, const TrainConfig& cfg,
                            const std::function<void(const EpochLog&)>& on_epoch = {});

} // namespace btks
