#include "btks/traineval.hpp"

#include "btks/dao.hpp"
#include "btks/errors.hpp"
#include "btks/ops.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace btks {

void TrainConfig::validate() const {
    if (!(lr > 0)) throw ConfigError("train.lr must be positive");
    if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
    if (decay_every == 0) throw ConfigError("train.decay_every must be positive");
    if (weight_decay < 0 || lambda_div < 0 || triplet_margin < 0)
        throw ConfigError("train.weight_decay, lambda_div and triplet_margin must be non-negative");
    if (identities_per_batch < 2) throw ConfigError("train.identities_per_batch must be at least 2 for triplet mining");
    if (segments_per_identity < 2)
        throw ConfigError("train.segments_per_identity must be at least 2 for triplet mining");
    if (passes_per_epoch == 0 || stride == 0) throw ConfigError("train.passes_per_epoch and stride must be positive");
}

nlohmann::json to_json(const TrainConfig& cfg) {
    return {{"lr", cfg.lr},
            {"weight_decay", cfg.weight_decay},
            {"decay_every", cfg.decay_every},
            {"decay_factor", cfg.decay_factor},
            {"epochs", cfg.epochs},
            {"lambda_div", cfg.lambda_div},
            {"triplet_margin", cfg.triplet_margin},
            {"identities_per_batch", cfg.identities_per_batch},
            {"segments_per_identity", cfg.segments_per_identity},
            {"passes_per_epoch", cfg.passes_per_epoch},
            {"stride", cfg.stride},
            {"augment", cfg.augment},
            {"seed", cfg.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base) {
    TrainConfig c = base;
    try {
        c.lr = j.value("lr", c.lr);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.decay_every = j.value("decay_every", c.decay_every);
        c.decay_factor = j.value("decay_factor", c.decay_factor);
        c.epochs = j.value("epochs", c.epochs);
        c.lambda_div = j.value("lambda_div", c.lambda_div);
        c.triplet_margin = j.value("triplet_margin", c.triplet_margin);
        c.identities_per_batch = j.value("identities_per_batch", c.identities_per_batch);
        c.segments_per_identity = j.value("segments_per_identity", c.segments_per_identity);
        c.passes_per_epoch = j.value("passes_per_epoch", c.passes_per_epoch);
        c.stride = j.value("stride", c.stride);
        c.augment = j.value("augment", c.augment);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    return c;
}

double learning_rate(const TrainConfig& cfg, std::size_t epoch) {
    return cfg.lr * std::pow(cfg.decay_factor, double(epoch / cfg.decay_every));
}

template <typename T>
Tensor<T> batch_hard_triplet(const Tensor<T>& features, const std::vector<std::size_t>& labels, T margin) {
    if (features.rank() != 2 || features.dim(0) != labels.size())
        throw InputError("triplet: features " + shape_str(features.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    const std::size_t b = labels.size(), d = features.dim(1);
    auto f = l2_normalize(features);
    const auto& v = f.values();
    auto dist = [&](std::size_t i, std::size_t j) {
        double s = 0;
        for (std::size_t k = 0; k < d; ++k) {
            const double diff = double(v[i * d + k]) - double(v[j * d + k]);
            s += diff * diff;
        }
        return s;
    };
    std::vector<std::size_t> anchor, pos, neg;
    for (std::size_t i = 0; i < b; ++i) {
        std::ptrdiff_t hp = -1, hn = -1;
        double dp = 0, dn = 0;
        for (std::size_t j = 0; j < b; ++j) {
            if (j == i) continue;
            const double dij = dist(i, j);
            if (labels[j] == labels[i]) {
                if (hp < 0 || dij > dp) hp = std::ptrdiff_t(j), dp = dij;
            } else if (hn < 0 || dij < dn) {
                hn = std::ptrdiff_t(j), dn = dij;
            }
        }
        if (hp < 0 || hn < 0)
            throw InputError("triplet: sample " + std::to_string(i) + " has no " + (hp < 0 ? "positive" : "negative") +
                             " in the batch");
        for (std::size_t k = 0; k < d; ++k) {
            anchor.push_back(i * d + k);
            pos.push_back(std::size_t(hp) * d + k);
            neg.push_back(std::size_t(hn) * d + k);
        }
    }
    auto rows = [&](const std::vector<std::size_t>& idx) { return reshape(gather_flat(f, idx), {b, d}); };
    auto a = rows(anchor), p = rows(pos), n = rows(neg);
    auto distance = [](const Tensor<T>& x, const Tensor<T>& y) {
        auto diff = sub(x, y);
        return sqrt(clamp_min(sum_axes(mul(diff, diff), {1}), T(1e-12)));
    };
    return mean(relu(add_scalar(sub(distance(a, p), distance(a, n)), margin)));
}

template <typename T>
LossTerms<T> total_loss(const Tensor<T>& features, const Tensor<T>& logits, const std::vector<std::size_t>& labels,
                        const Tensor<T>& divergence, const TrainConfig& cfg) {
    if (labels.empty()) throw InputError("total_loss: empty batch");
    if (std::all_of(labels.begin(), labels.end(), [&](std::size_t l) { return l == labels[0]; }))
        throw InputError("total_loss: a batch with a single identity has no triplet negatives");
    auto ce = cross_entropy(logits, labels);
    auto trip = batch_hard_triplet(features, labels, static_cast<T>(cfg.triplet_margin));
    LossTerms<T> terms;
    terms.total = add(add(ce, trip), mul_scalar(divergence, static_cast<T>(cfg.lambda_div)));
    terms.ce = ce.item();
    terms.triplet = trip.item();
    terms.divergence = divergence.item();
    return terms;
}

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

template <typename T>
void Adam<T>::step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_)), c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        auto w = p.data();
        const bool has = p.has_grad();
        auto g = p.grad();
        for (std::size_t k = 0; k < w.size(); ++k) {
            const double grad = (has ? double(g[k]) : 0.0) + cfg_.weight_decay * double(w[k]);
            m_[i][k] = cfg_.beta1 * m_[i][k] + (1 - cfg_.beta1) * grad;
            v_[i][k] = cfg_.beta2 * v_[i][k] + (1 - cfg_.beta2) * grad * grad;
            const double mh = m_[i][k] / c1, vh = v_[i][k] / c2;
            w[k] = static_cast<T>(double(w[k]) - lr * mh / (std::sqrt(vh) + cfg_.eps));
        }
    }
}

namespace {

// [S, N, 3, H, W] from consecutive segments; trailing frames dropped.
Tensor<float> consecutive_segments(const Tensor<float>& frames, std::size_t n) {
    if (frames.rank() != 4) throw InputError("expected tracklet frames [L, 3, H, W], got " + shape_str(frames.shape()));
    const std::size_t s = frames.dim(0) / n;
    if (s == 0)
        throw InputError("tracklet of " + std::to_string(frames.dim(0)) + " frames is shorter than one " +
                         std::to_string(n) + "-frame segment");
    return reshape(slice(frames, 0, 0, s * n), {s, n, frames.dim(1), frames.dim(2), frames.dim(3)});
}

std::vector<double> normalized(const std::vector<float>& x) {
    double n = 0;
    for (float v : x) n += double(v) * double(v);
    n = std::max(std::sqrt(n), 1e-12);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = double(x[i]) / n;
    return out;
}

} // namespace

BiCnetOutput<float> forward_tracklet(const BiCnetModel<float>& model, const Tensor<float>& frames) {
    if (model.training()) throw UsageError("feature extraction needs the model in evaluation mode");
    const auto& cfg = model.config();
    auto split = resize_and_split(consecutive_segments(frames, cfg.segment_len), cfg.alpha, cfg.input,
                                  cfg.small_input());
    NoGradGuard guard;
    return model.forward(split);
}

Tensor<float> extract_video_feature(const Tensor<float>& frames, const BiCnetModel<float>& model) {
    auto out = forward_tracklet(model, frames);
    NoGradGuard guard;
    return mean_axes(out.video, {0});
}

RetrievalResult evaluate_retrieval(const std::vector<std::vector<float>>& query,
                                   const std::vector<std::size_t>& query_labels,
                                   const std::vector<std::vector<float>>& gallery,
                                   const std::vector<std::size_t>& gallery_labels) {
    if (gallery.empty()) throw InputError("evaluate_retrieval: empty gallery");
    if (query.size() != query_labels.size() || gallery.size() != gallery_labels.size())
        throw InputError("evaluate_retrieval: feature and label counts differ");
    const std::size_t g = gallery.size();
    std::vector<std::vector<double>> gn;
    for (const auto& x : gallery) gn.push_back(normalized(x));
    RetrievalResult r;
    r.cmc.assign(g, 0.0);
    for (std::size_t q = 0; q < query.size(); ++q) {
        const std::size_t positives =
            std::size_t(std::count(gallery_labels.begin(), gallery_labels.end(), query_labels[q]));
        if (positives == 0) {
            ++r.excluded_queries;
            continue;
        }
        const auto qn = normalized(query[q]);
        if (qn.size() != gn[0].size()) throw InputError("evaluate_retrieval: feature dimensions differ");
        std::vector<double> dist(g);
        for (std::size_t j = 0; j < g; ++j) {
            double dot = 0;
            for (std::size_t k = 0; k < qn.size(); ++k) dot += qn[k] * gn[j][k];
            dist[j] = 1.0 - dot;
        }
        std::vector<std::size_t> order(g);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
        double ap = 0;
        std::size_t hits = 0, first = g;
        for (std::size_t rank = 0; rank < g; ++rank) {
            if (gallery_labels[order[rank]] != query_labels[q]) continue;
            ++hits;
            if (first == g) first = rank;
            ap += double(hits) / double(rank + 1);
        }
        r.average_precision.push_back(ap / double(positives));
        for (std::size_t k = first; k < g; ++k) r.cmc[k] += 1.0;
    }
    const std::size_t evaluated = r.average_precision.size();
    if (evaluated > 0) {
        r.mAP = std::accumulate(r.average_precision.begin(), r.average_precision.end(), 0.0) / double(evaluated);
        for (auto& c : r.cmc) c /= double(evaluated);
    }
    return r;
}

BaselineEstimate random_feature_baseline(const std::vector<std::size_t>& query_labels,
                                         const std::vector<std::size_t>& gallery_labels, std::size_t dim,
                                         std::size_t trials, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> maps;
    auto draw = [&](std::size_t count) {
        std::vector<std::vector<float>> f(count, std::vector<float>(dim));
        for (auto& row : f)
            for (auto& v : row) v = float(rng.normal());
        return f;
    };
    for (std::size_t t = 0; t < trials; ++t) {
        auto q = draw(query_labels.size());
        auto g = draw(gallery_labels.size());
        maps.push_back(evaluate_retrieval(q, query_labels, g, gallery_labels).mAP);
    }
    BaselineEstimate e;
    e.trials = trials;
    if (trials == 0) return e;
    e.mean = std::accumulate(maps.begin(), maps.end(), 0.0) / double(trials);
    double var = 0;
    for (double m : maps) var += (m - e.mean) * (m - e.mean);
    e.stddev = trials > 1 ? std::sqrt(var / double(trials - 1)) : 0.0;
    return e;
}

AttentionSimilarity attention_similarity(const BiCnetModel<float>& model, const Dataset& data,
                                         const std::vector<std::size_t>& tracklets) {
    if (!model.config().dao.enabled) throw UsageError("attention_similarity: the model has no DAO maps");
    double sums[2] = {0, 0};
    double clips = 0;
    std::size_t branches = 0;
    for (auto idx : tracklets) {
        auto out = forward_tracklet(model, data.frames(idx));
        branches = out.attention_maps.size();
        const double s = double(out.attention_maps[0].dim(0));
        for (std::size_t b = 0; b < branches; ++b) sums[b] += s * mean_pairwise_cosine(out.attention_maps[b]);
        clips += s;
    }
    AttentionSimilarity a;
    if (clips == 0) return a;
    a.detail = sums[0] / clips;
    if (branches > 1) a.context = sums[1] / clips;
    a.mean = branches > 1 ? (a.detail + a.context) / 2 : a.detail;
    return a;
}

Evaluation evaluate(const BiCnetModel<float>& model, const Dataset& data, std::size_t baseline_trials,
                    std::uint64_t seed) {
    auto features = [&](Split split, std::vector<std::size_t>& labels) {
        std::vector<std::vector<float>> out;
        for (auto idx : data.indices(split)) {
            auto f = extract_video_feature(data.frames(idx), model);
            out.emplace_back(f.values().begin(), f.values().end());
            labels.push_back(data.tracklets()[idx].identity);
        }
        return out;
    };
    std::vector<std::size_t> ql, gl;
    auto q = features(Split::query, ql);
    auto g = features(Split::gallery, gl);
    Evaluation e;
    e.retrieval = evaluate_retrieval(q, ql, g, gl);
    e.baseline = random_feature_baseline(ql, gl, model.feature_dim(), baseline_trials, seed);
    if (model.config().dao.enabled) {
        auto held_out = data.indices(Split::query);
        const auto gallery = data.indices(Split::gallery);
        held_out.insert(held_out.end(), gallery.begin(), gallery.end());
        std::sort(held_out.begin(), held_out.end());
        e.attention = attention_similarity(model, data, held_out);
    }
    return e;
}

nlohmann::json to_json(const Evaluation& e) {
    const auto& r = e.retrieval;
    std::vector<double> cmc(r.cmc.begin(), r.cmc.begin() + std::ptrdiff_t(std::min<std::size_t>(r.cmc.size(), 20)));
    nlohmann::json j{{"mAP", r.mAP},
                     {"cmc", cmc},
                     {"rank1", r.cmc.empty() ? 0.0 : r.cmc[0]},
                     {"queries", r.average_precision.size()},
                     {"excluded_queries", r.excluded_queries},
                     {"random_baseline", {{"mAP", e.baseline.mean}, {"stddev", e.baseline.stddev}, {"trials", e.baseline.trials}}},
                     {"mAP_over_baseline", e.baseline.mean > 0 ? r.mAP / e.baseline.mean : 0.0}};
    j["attention_cosine"] = {{"detail", e.attention.detail}, {"context", e.attention.context}, {"mean", e.attention.mean}};
    return j;
}

nlohmann::json to_json(const EpochLog& log) {
    return {{"epoch", log.epoch},
            {"lr", log.lr},
            {"steps", log.steps},
            {"loss", log.loss},
            {"ce", log.ce},
            {"triplet", log.triplet},
            {"divergence", log.divergence},
            {"attention_cosine", {{"detail", log.attention_cosine_detail}, {"context", log.attention_cosine_context}}}};
}

std::vector<EpochLog> train(BiCnetModel<float>& model, const Dataset& data, const TrainConfig& cfg,
                            const std::function<void(const EpochLog&)>& on_epoch) {
    cfg.validate();
    const auto& mc = model.config();
    const auto train_idx = data.indices(Split::train);
    const auto classes = data.identities_in(Split::train);
    if (model.num_classes() != classes.size())
        throw ConfigError("model head has " + std::to_string(model.num_classes()) + " classes but the train split has " +
                          std::to_string(classes.size()) + " identities");
    std::map<std::size_t, std::size_t> class_of;
    for (std::size_t i = 0; i < classes.size(); ++i) class_of[classes[i]] = i;

    std::vector<Tensor<float>> frames;
    std::vector<std::size_t> labels;
    for (auto idx : train_idx) {
        frames.push_back(data.frames(idx));
        labels.push_back(class_of.at(data.tracklets()[idx].identity));
    }
    PkSampler sampler(labels, cfg.identities_per_batch, cfg.segments_per_identity, cfg.seed ^ 0x5a5a5a5aULL);
    Rng rng(cfg.seed);
    AdamConfig ac;
    ac.weight_decay = cfg.weight_decay;
    Adam<float> adam(model.store().trainable(), ac);

    std::vector<EpochLog> logs;
    model.set_training(true);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        EpochLog log;
        log.epoch = epoch;
        log.lr = learning_rate(cfg, epoch);
        for (const auto& batch : sampler.epoch(cfg.passes_per_epoch)) {
            std::vector<Tensor<float>> segments;
            std::vector<std::size_t> batch_labels;
            for (auto pos : batch) {
                auto seg = sample_segment(frames[pos], mc.segment_len, cfg.stride, rng);
                if (cfg.augment) seg = augment(seg, rng);
                segments.push_back(seg);
                batch_labels.push_back(labels[pos]);
            }
            auto split = resize_and_split(stack(segments, 0), mc.alpha, mc.input, mc.small_input());
            model.store().zero_grad();
            auto out = model.forward(split);
            auto terms = total_loss(out.video, model.classify(out.video), batch_labels, out.divergence, cfg);
            const float total = terms.total.item();
            if (!std::isfinite(total)) {
                nlohmann::json state{{"epoch", epoch},  {"step", adam.steps()},     {"lr", log.lr},
                                     {"ce", terms.ce},  {"triplet", terms.triplet}, {"divergence", terms.divergence},
                                     {"batch", batch}};
                model.set_training(false);
                throw VerificationError("training diverged (non-finite loss): " + state.dump());
            }
            terms.total.backward();
            adam.step(log.lr);
            ++log.steps;
            log.loss += total;
            log.ce += terms.ce;
            log.triplet += terms.triplet;
            log.divergence += terms.divergence;
            if (!out.attention_maps.empty()) log.attention_cosine_detail += mean_pairwise_cosine(out.attention_maps[0]);
            if (out.attention_maps.size() > 1) log.attention_cosine_context += mean_pairwise_cosine(out.attention_maps[1]);
        }
        const double steps = double(std::max<std::size_t>(log.steps, 1));
        for (double* v : {&log.loss, &log.ce, &log.triplet, &log.divergence, &log.attention_cosine_detail,
                          &log.attention_cosine_context})
            *v /= steps;
        logs.push_back(log);
        if (on_epoch) on_epoch(log);
    }
    model.set_training(false);
    return logs;
}

template Tensor<float> batch_hard_triplet(const Tensor<float>&, const std::vector<std::size_t>&, float);
template Tensor<double> batch_hard_triplet(const Tensor<double>&, const std::vector<std::size_t>&, double);
template LossTerms<float> total_loss(const Tensor<float>&, const Tensor<float>&, const std::vector<std::size_t>&,
                                     const Tensor<float>&, const TrainConfig&);
template LossTerms<double> total_loss(const Tensor<double>&, const Tensor<double>&, const std::vector<std::size_t>&,
                                      const Tensor<double>&, const TrainConfig&);
template class Adam<float>;
template class Adam<double>;

} // namespace btks
