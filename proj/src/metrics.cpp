#include "crayon/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace crayon {

using nlohmann::json;

namespace {
json report_to_json(const GroupAccuracyReport& r) {
    json groups = json::object();
    for (const auto& [g, s] : r.per_group) {
        groups[group_name(g)] = {{"class", g.class_label},
                                 {"spurious", g.spurious_label},
                                 {"correct", s.correct},
                                 {"total", s.total},
                                 {"accuracy", s.accuracy()}};
    }
    return {{"wga", r.wga}, {"mga", r.mga}, {"average_accuracy", r.average_accuracy}, {"groups", groups}};
}
}  // namespace

std::string GroupAccuracyReport::to_json() const { return report_to_json(*this).dump(2); }

GroupAccuracyReport make_report(const std::map<GroupId, GroupStats>& groups) {
    if (groups.empty()) throw std::invalid_argument("group metrics: no groups");
    GroupAccuracyReport r;
    r.per_group = groups;
    r.wga = 1.0;
    double sum = 0.0;
    int correct = 0, total = 0;
    for (const auto& [g, s] : groups) {
        if (s.total <= 0) throw std::invalid_argument("group metrics: empty group " + group_name(g));
        const double a = s.accuracy();
        r.wga = std::min(r.wga, a);
        sum += a;
        correct += s.correct;
        total += s.total;
    }
    r.mga = sum / static_cast<double>(groups.size());
    r.average_accuracy = static_cast<double>(correct) / total;
    return r;
}

std::vector<int> predict(const ConvNet& model, const Tensor& images, int batch) {
    const Tensor logits = model.logits(images, batch);
    const int n = logits.dim(0), k = logits.dim(1);
    std::vector<int> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double* row = logits.data() + static_cast<std::size_t>(i) * k;
        out[static_cast<std::size_t>(i)] = static_cast<int>(std::max_element(row, row + k) - row);
    }
    return out;
}

GroupAccuracyReport group_metrics(const std::vector<int>& predictions, const Dataset& data) {
    if (predictions.size() != data.size()) throw std::invalid_argument("group metrics: prediction count mismatch");
    std::map<GroupId, GroupStats> groups;
    for (std::size_t i = 0; i < data.size(); ++i) {
        GroupStats& s = groups[data.examples[i].group()];
        ++s.total;
        if (predictions[i] == data.examples[i].class_label) ++s.correct;
    }
    return make_report(groups);
}

GroupAccuracyReport group_metrics(const ConvNet& model, const Dataset& data) {
    if (data.size() == 0) throw std::invalid_argument("group metrics: empty test set");
    return group_metrics(predict(model, data.all_images()), data);
}

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.size() != labels.size() || labels.empty()) throw std::invalid_argument("accuracy: size mismatch");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i];
    return static_cast<double>(hit) / static_cast<double>(labels.size());
}

BackgroundMetrics background_metrics(double mixed_same_accuracy, double mixed_rand_accuracy) {
    return {mixed_same_accuracy, mixed_rand_accuracy, mixed_same_accuracy - mixed_rand_accuracy};
}

BackgroundMetrics background_metrics(const ConvNet& model, const Dataset& mixed_same, const Dataset& mixed_rand) {
    if (mixed_same.size() == 0 || mixed_rand.size() == 0) throw std::invalid_argument("background metrics: empty set");
    if (mixed_same.num_classes != mixed_rand.num_classes) {
        throw std::invalid_argument("background metrics: class spaces differ");
    }
    return background_metrics(accuracy(predict(model, mixed_same.all_images()), mixed_same.labels()),
                              accuracy(predict(model, mixed_rand.all_images()), mixed_rand.labels()));
}

std::string percent(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", fraction * 100.0);
    return buf;
}

std::string report_json(const std::vector<ReportRow>& rows) {
    json arr = json::array();
    for (const auto& r : rows) {
        json j = report_to_json(r.groups);
        j["method"] = r.method;
        if (r.has_background) {
            j["mixed_same_accuracy"] = r.background.mixed_same_accuracy;
            j["mixed_rand_accuracy"] = r.background.mixed_rand_accuracy;
            j["bg_gap"] = r.background.bg_gap;
        }
        arr.push_back(j);
    }
    return arr.dump(2);
}

std::vector<ReportRow> report_rows_from_json(const std::string& text) {
    const json j = json::parse(text);
    const json arr = j.is_array() ? j : json::array({j});
    std::vector<ReportRow> rows;
    for (const auto& r : arr) {
        std::map<GroupId, GroupStats> groups;
        for (const auto& [name, g] : r.at("groups").items()) {
            groups[{g.at("class").get<int>(), g.at("spurious").get<int>()}] = {g.at("correct").get<int>(),
                                                                               g.at("total").get<int>()};
        }
        ReportRow row{r.value("method", std::string("model")), make_report(groups), false, {}};
        if (r.contains("bg_gap")) {
            row.has_background = true;
            row.background = background_metrics(r.at("mixed_same_accuracy").get<double>(),
                                                r.at("mixed_rand_accuracy").get<double>());
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string report_markdown(const std::vector<ReportRow>& rows) {
    std::ostringstream out;
    out << "| Method | WGA | MGA | MR | BG-Gap |\n|---|---:|---:|---:|---:|\n";
    for (const auto& r : rows) {
        out << "| " << r.method << " | " << percent(r.groups.wga) << " | " << percent(r.groups.mga) << " | "
            << (r.has_background ? percent(r.background.mixed_rand_accuracy) : "-") << " | "
            << (r.has_background ? percent(r.background.bg_gap) : "-") << " |\n";
    }
    return out.str();
}

double linear_probe_accuracy(const Tensor& features, const std::vector<int>& labels, int num_classes,
                             std::uint64_t seed, int epochs) {
    if (features.rank() != 2 || features.dim(0) != static_cast<int>(labels.size()) || labels.size() < 4) {
        throw std::invalid_argument("linear probe: need [N,D] features with N >= 4 matching labels");
    }
    const int n = features.dim(0), d = features.dim(1), k = num_classes;
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const std::vector<int> train(order.begin(), order.begin() + n / 2), test(order.begin() + n / 2, order.end());

    std::vector<double> mean(static_cast<std::size_t>(d), 0.0), sd(static_cast<std::size_t>(d), 0.0);
    for (int i : train) {
        for (int j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += features[static_cast<std::size_t>(i) * d + j];
    }
    for (auto& m : mean) m /= static_cast<double>(train.size());
    for (int i : train) {
        for (int j = 0; j < d; ++j) {
            const double z = features[static_cast<std::size_t>(i) * d + j] - mean[static_cast<std::size_t>(j)];
            sd[static_cast<std::size_t>(j)] += z * z;
        }
    }
    for (auto& s : sd) s = std::sqrt(s / static_cast<double>(train.size())) + 1e-8;
    auto x = [&](int i, int j) {
        return (features[static_cast<std::size_t>(i) * d + j] - mean[static_cast<std::size_t>(j)]) /
               sd[static_cast<std::size_t>(j)];
    };

    // Full-batch gradient descent on the softmax cross-entropy.
    std::vector<double> w(static_cast<std::size_t>(k) * (d + 1), 0.0);
    std::vector<double> g(w.size()), p(static_cast<std::size_t>(k));
    const double lr = 0.5;
    auto scores = [&](int i) {
        for (int c = 0; c < k; ++c) {
            double s = w[static_cast<std::size_t>(c) * (d + 1) + d];
            for (int j = 0; j < d; ++j) s += w[static_cast<std::size_t>(c) * (d + 1) + j] * x(i, j);
            p[static_cast<std::size_t>(c)] = s;
        }
    };
    for (int e = 0; e < epochs; ++e) {
        std::fill(g.begin(), g.end(), 0.0);
        for (int i : train) {
            scores(i);
            const double mx = *std::max_element(p.begin(), p.end());
            double z = 0.0;
            for (auto& v : p) z += (v = std::exp(v - mx));
            for (int c = 0; c < k; ++c) {
                const double err = p[static_cast<std::size_t>(c)] / z - (labels[static_cast<std::size_t>(i)] == c);
                for (int j = 0; j < d; ++j) g[static_cast<std::size_t>(c) * (d + 1) + j] += err * x(i, j);
                g[static_cast<std::size_t>(c) * (d + 1) + d] += err;
            }
        }
        for (std::size_t t = 0; t < w.size(); ++t) w[t] -= lr * g[t] / static_cast<double>(train.size());
    }
    int hit = 0;
    for (int i : test) {
        scores(i);
        hit += static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()) == labels[static_cast<std::size_t>(i)];
    }
    return static_cast<double>(hit) / static_cast<double>(test.size());
}

Tensor background_color_features(const Dataset& data) {
    if (!data.has_masks()) throw std::invalid_argument("background features need masks");
    Tensor out({static_cast<int>(data.size()), 3}, 0.0);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& e = data.examples[i];
        const std::size_t plane = e.mask->bits.size();
        std::size_t count = 0;
        for (std::size_t p = 0; p < plane; ++p) {
            if (e.mask->bits[p]) continue;
            for (int c = 0; c < 3; ++c) out[i * 3 + static_cast<std::size_t>(c)] += e.image[c * plane + p];
            ++count;
        }
        for (int c = 0; c < 3; ++c) out[i * 3 + static_cast<std::size_t>(c)] /= static_cast<double>(std::max<std::size_t>(count, 1));
    }
    return out;
}

}  // namespace crayon
