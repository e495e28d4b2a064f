#include "msscanet/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "msscanet/errors.hpp"
#include "msscanet/rng.hpp"

namespace msscanet {

double cosine_lr(int64_t t, int64_t t_total, double lr0, double lr_min) {
    if (t_total < 1) throw UsageError("cosine_lr: T_total must be >= 1");
    if (t < 0 || t > t_total)
        throw UsageError("cosine_lr: step " + std::to_string(t) + " outside [0, " +
                         std::to_string(t_total) + "]");
    const double pi = 3.14159265358979323846;
    return lr_min + 0.5 * (lr0 - lr_min) *
                        (1.0 + std::cos(pi * static_cast<double>(t) / static_cast<double>(t_total)));
}

TrainResult train(Model& model, const DatasetManifest& manifest, const TrainSchedule& schedule) {
    if (schedule.epochs < 1) throw UsageError("train: epochs must be >= 1");
    if (schedule.batch_size < 1) throw UsageError("train: batch_size must be >= 1");
    const auto records = manifest.split("train");
    if (records.empty()) throw DataError("train: manifest has no train records");

    // Cache images and normalized targets once.
    std::vector<TensorPtr> images;
    std::vector<double> targets;
    images.reserve(records.size());
    for (const auto* r : records) {
        images.push_back(read_ppm(r->path));
        targets.push_back(manifest.normalize(r->mos));
    }

    TrainResult result;
    std::vector<size_t> order(records.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (int64_t epoch = 0; epoch < schedule.epochs; ++epoch) {
        const double lr = cosine_lr(epoch, schedule.epochs, schedule.lr0, schedule.lr_min);
        Rng shuffle_rng(derive_seed(schedule.seed, static_cast<uint64_t>(epoch) + 1));
        shuffle_rng.shuffle(order);

        double epoch_total = 0.0, epoch_l1 = 0.0, epoch_cb = 0.0, epoch_ap = 0.0;
        int64_t batch_index = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(schedule.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(schedule.batch_size));
            const double inv_batch = 1.0 / static_cast<double>(end - start);

            for (auto& [name, p] : model.parameters) p->zero_grad();

            TensorPtr batch_sum;
            for (size_t k = start; k < end; ++k) {
                const size_t idx = order[k];
                auto fwd = forward(model, images[idx]);
                auto parts = total_loss(fwd.mos, scalar(targets[idx]), fwd.feats, schedule.weights);
                epoch_total += parts.total->item();
                epoch_l1 += parts.l1->item();
                epoch_cb += parts.cb->item();
                epoch_ap += parts.ap->item();
                batch_sum = batch_sum ? add(batch_sum, parts.total) : parts.total;
            }
            auto batch_loss = scale(batch_sum, inv_batch);
            if (!std::isfinite(batch_loss->item()))
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batch_index));
            backward(batch_loss);

            for (auto& [name, p] : model.parameters) {
                if (p->grad.empty()) continue;
                for (size_t i = 0; i < p->data.size(); ++i) p->data[i] -= lr * p->grad[i];
            }
            for (auto& [name, p] : model.parameters) p->zero_grad();
            ++batch_index;
        }

        const double inv_n = 1.0 / static_cast<double>(order.size());
        result.log.push_back(EpochLog{epoch, epoch_total * inv_n, epoch_l1 * inv_n, epoch_cb * inv_n,
                                      epoch_ap * inv_n, lr});
    }
    return result;
}

EvalReport evaluate(const Model& model, const DatasetManifest& manifest, const std::string& split) {
    auto records = manifest.split(split);
    if (records.empty()) throw DataError("evaluate: split '" + split + "' is empty");
    std::sort(records.begin(), records.end(),
              [](const ManifestRecord* a, const ManifestRecord* b) { return a->path < b->path; });

    std::vector<double> predicted, actual;
    for (const auto* r : records) {
        auto img = read_ppm(r->path);
        auto fwd = forward(model, img);
        predicted.push_back(manifest.denormalize(fwd.mos->item()));
        actual.push_back(r->mos);
    }
    return correlation_report(predicted, actual);
}

void write_scatter_csv(const EvalReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write scatter file: " + path);
    out.precision(17);
    out << "predicted,actual\n";
    for (const auto& [p, a] : report.scatter) out << p << "," << a << "\n";
    if (!out) throw DataError("write failure while saving scatter: " + path);
}

namespace {

double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const size_t lo = static_cast<size_t>(std::floor(pos));
    const size_t hi = static_cast<size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace

std::vector<CrossValCell> cross_dataset(const std::vector<CrossValPair>& pairs,
                                        const ModelConfig& config, const TrainSchedule& schedule,
                                        int64_t folds) {
    if (pairs.empty()) throw UsageError("cross_dataset: no manifest pairs");
    if (folds < 2) throw UsageError("cross_dataset: folds must be >= 2");

    std::vector<CrossValCell> cells;
    for (size_t pair_idx = 0; pair_idx < pairs.size(); ++pair_idx) {
        const auto train_m = load_manifest(pairs[pair_idx].train_manifest);
        const auto test_m = load_manifest(pairs[pair_idx].test_manifest);

        const std::string train_tag = train_m.records.front().dataset;
        const std::string test_tag = test_m.records.front().dataset;
        if (train_tag == test_tag)
            throw DataError("cross_dataset: leakage — train and test manifests share dataset tag '" +
                            train_tag + "'");
        std::set<std::string> train_paths;
        for (const auto& r : train_m.records) train_paths.insert(r.path);
        for (const auto& r : test_m.records)
            if (train_paths.count(r.path))
                throw DataError("cross_dataset: leakage — image path '" + r.path +
                                "' appears in both train and test manifests");

        // The whole foreign manifest is the evaluation set.
        DatasetManifest eval_m;
        eval_m.mos_lo = test_m.mos_lo;
        eval_m.mos_hi = test_m.mos_hi;
        for (auto r : test_m.records) {
            r.split = "test";
            eval_m.records.push_back(std::move(r));
        }

        std::vector<size_t> order(train_m.records.size());
        std::iota(order.begin(), order.end(), size_t{0});
        Rng fold_rng(derive_seed(schedule.seed, 0xc0ffee + pair_idx));
        fold_rng.shuffle(order);

        CrossValCell cell;
        cell.train_tag = train_tag;
        cell.test_tag = test_tag;
        for (int64_t fold = 0; fold < folds; ++fold) {
            DatasetManifest fold_m;
            fold_m.mos_lo = train_m.mos_lo;
            fold_m.mos_hi = train_m.mos_hi;
            for (size_t k = 0; k < order.size(); ++k) {
                if (static_cast<int64_t>(k % static_cast<size_t>(folds)) == fold) continue;  // held-out fold
                auto r = train_m.records[order[k]];
                r.split = "train";
                fold_m.records.push_back(std::move(r));
            }
            if (fold_m.records.empty())
                throw DataError("cross_dataset: fold " + std::to_string(fold) + " left no training data");

            ModelConfig fold_cfg = config;
            fold_cfg.seed = derive_seed(config.seed, static_cast<uint64_t>(fold) + 1);
            TrainSchedule fold_sched = schedule;
            fold_sched.seed = derive_seed(schedule.seed, 0xf01d + static_cast<uint64_t>(fold));

            auto model = build_model(fold_cfg);
            train(model, fold_m, fold_sched);
            const auto report = evaluate(model, eval_m, "test");
            cell.srocc_per_fold.push_back(report.srocc);
            cell.plcc_per_fold.push_back(report.plcc);
        }
        cell.min = quantile(cell.srocc_per_fold, 0.0);
        cell.q1 = quantile(cell.srocc_per_fold, 0.25);
        cell.median = quantile(cell.srocc_per_fold, 0.5);
        cell.q3 = quantile(cell.srocc_per_fold, 0.75);
        cell.max = quantile(cell.srocc_per_fold, 1.0);
        cells.push_back(std::move(cell));
    }
    return cells;
}

std::string render_crossval_csv(const std::vector<CrossValCell>& cells) {
    std::string out = "train,test,fold,srocc,plcc\n";
    char buf[256];
    for (const auto& c : cells)
        for (size_t f = 0; f < c.srocc_per_fold.size(); ++f) {
            std::snprintf(buf, sizeof(buf), "%s,%s,%zu,%.10f,%.10f\n", c.train_tag.c_str(),
                          c.test_tag.c_str(), f, c.srocc_per_fold[f], c.plcc_per_fold[f]);
            out += buf;
        }
    out += "train,test,min,q1,median,q3,max\n";
    for (const auto& c : cells) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%.10f,%.10f,%.10f,%.10f,%.10f\n", c.train_tag.c_str(),
                      c.test_tag.c_str(), c.min, c.q1, c.median, c.q3, c.max);
        out += buf;
    }
    return out;
}

}  // namespace msscanet
