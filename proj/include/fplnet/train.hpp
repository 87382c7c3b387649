#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fplnet/checkpoint.hpp"
#include "fplnet/config.hpp"
#include "fplnet/data.hpp"
#include "fplnet/loss.hpp"
#include "fplnet/metrics.hpp"
#include "fplnet/network.hpp"
#include "fplnet/optim.hpp"

namespace fplnet {

struct TrainLogEntry {
    std::string stage;
    std::size_t iter = 0;
    double lr = 0.0;
    double loss = 0.0;
};

using TrainLogger = std::function<void(const TrainLogEntry&)>;

struct StageOptions {
    std::string name = "train";
    std::size_t batch = 4;
    bool augment = true;
    AugmentSpec augment_spec{};
};

/// One forward/backward/SGD step on a batch; returns the loss.
template <typename T>
double train_step(Network<T>& net, SgdState<T>& state, const Tensor<T>& images, const LabelMap& labels,
                  const std::vector<double>& weights, double lr, const TrainConfig& cfg) {
    net.store().zero_grad();
    Graph<T> g(true);
    auto logits = net.forward(g, g.input(images), Mode::train);
    auto loss = ag::weighted_cross_entropy(g, logits, labels, weights);
    g.backward(loss);
    sgd_step(net.store(), state, lr, cfg);
    return static_cast<double>(loss.value()[0]);
}

/// cfg.max_iter SGD steps at poly learning rates for iterations
/// 0..max_iter-1, each on a random (optionally augmented) batch. Returns the
/// loss of every step.
template <typename T>
std::vector<double> train_stage(Network<T>& net, const std::vector<Sample>& train, const std::vector<double>& weights,
                                const TrainConfig& cfg, const StageOptions& opt, Rng& rng,
                                const TrainLogger& log = {}) {
    cfg.validate();
    if (train.empty()) throw DataError("train_stage: empty training set");
    SgdState<T> state;
    std::vector<double> losses;
    for (std::size_t it = 0; it < cfg.max_iter; ++it) {
        std::vector<Sample> batch;
        for (std::size_t b = 0; b < opt.batch; ++b) {
            const Sample& s = train[static_cast<std::size_t>(rng() % train.size())];
            batch.push_back(opt.augment ? augment(s, rng, opt.augment_spec) : s);
        }
        auto [img, lab] = make_batch(batch);
        const double lr = poly_lr(it, cfg);
        const double loss = train_step(net, state, img.template cast<T>(), lab, weights, lr, cfg);
        losses.push_back(loss);
        if (log) log(TrainLogEntry{opt.name, it, lr, loss});
    }
    return losses;
}

template <typename T>
MiouResult evaluate(const Network<T>& net, const std::vector<Sample>& data) {
    ConfusionMatrix cm(net.config().num_classes);
    for (const auto& s : data) cm.add(net.predict(s.image.template cast<T>()), s.label);
    return miou(cm);
}

template <typename T = float>
struct ToyResult {
    std::vector<double> encoder_losses;
    std::vector<double> full_losses;
    std::vector<double> class_frequencies;
    ClassWeighting weights;
    MiouResult val;
    MiouResult train_subset;
    std::unique_ptr<Network<T>> encoder;
    std::unique_ptr<Network<T>> full;
};

/// Splits the synthetic set into data.count training and toy.val_count
/// held-out images (one generator, held-out images last).
inline std::pair<std::vector<Sample>, std::vector<Sample>> toy_datasets(const RunConfig& rc) {
    SynthSpec spec = rc.data;
    spec.num_classes = rc.net.num_classes;
    spec.count = rc.data.count + rc.toy.val_count;
    auto all = synth_dataset(spec);
    std::vector<Sample> val(std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(rc.data.count)),
                            std::make_move_iterator(all.end()));
    all.resize(rc.data.count);
    return {std::move(all), std::move(val)};
}

/// Stage 1 trains the encoder with the 1x1 + 8x bilinear head; stage 2
/// builds the full network, copies every encoder tensor by name and trains
/// the whole network. Fully determined by the config's seeds.
template <typename T = float>
ToyResult<T> run_toy_protocol(const RunConfig& rc, const std::vector<Sample>& train, const std::vector<Sample>& val,
                              const TrainLogger& log = {}) {
    if (train.empty()) throw DataError("toy protocol: empty training set");
    if (val.empty()) throw DataError("toy protocol: empty held-out set");
    ToyResult<T> out;
    out.class_frequencies = class_frequencies(train, rc.net.num_classes);
    out.weights = class_weights(out.class_frequencies, rc.train.class_weight_c);
    Rng rng(rc.data.seed ^ 0x9e3779b97f4a7c15ULL);

    NetworkConfig enc_cfg = rc.net;
    enc_cfg.decoder = DecoderKind::encoder_only;
    out.encoder = build_fplnet<T>(enc_cfg);
    NetworkConfig full_cfg = rc.net;
    full_cfg.decoder = DecoderKind::sequential;
    out.full = build_fplnet<T>(full_cfg);

    StageOptions opt;
    opt.augment = rc.toy.augment;
    opt.augment_spec = rc.toy.augment_spec;
    if (rc.toy.encoder_iters > 0) {
        TrainConfig cfg = rc.train;
        cfg.max_iter = rc.toy.encoder_iters;
        cfg.batch_size = rc.toy.encoder_batch;
        opt.name = "encoder";
        opt.batch = rc.toy.encoder_batch;
        out.encoder_losses = train_stage(*out.encoder, train, out.weights.w_class, cfg, opt, rng, log);
        load_into(*out.full, snapshot(*out.encoder), LoadMode::matching);
    }
    if (rc.toy.full_iters > 0) {
        TrainConfig cfg = rc.train;
        cfg.max_iter = rc.toy.full_iters;
        cfg.batch_size = rc.toy.full_batch;
        opt.name = "full";
        opt.batch = rc.toy.full_batch;
        out.full_losses = train_stage(*out.full, train, out.weights.w_class, cfg, opt, rng, log);
    }
    out.val = evaluate(*out.full, val);
    const std::vector<Sample> head(train.begin(),
                                   train.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(train.size(), 20)));
    out.train_subset = evaluate(*out.full, head);
    return out;
}

template <typename T = float>
ToyResult<T> run_toy_protocol(const RunConfig& rc, const TrainLogger& log = {}) {
    const auto [train, val] = toy_datasets(rc);
    return run_toy_protocol<T>(rc, train, val, log);
}

} // namespace fplnet
