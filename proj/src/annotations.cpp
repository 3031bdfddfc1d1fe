#include "crayon/annotations.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace crayon {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(SubjectKind k) { return k == SubjectKind::saliency ? "saliency" : "patch"; }
std::string to_string(Answer a) { return a == Answer::yes ? "yes" : "no"; }

SubjectKind parse_subject_kind(const std::string& s) {
    if (s == "saliency") return SubjectKind::saliency;
    if (s == "patch") return SubjectKind::patch;
    throw std::invalid_argument("unknown subject kind: " + s);
}

Answer parse_answer(const std::string& s) {
    if (s == "yes") return Answer::yes;
    if (s == "no") return Answer::no;
    throw std::invalid_argument("answer must be yes or no, got: " + s);
}

std::string AnnotationRecord::to_json() const {
    json j = {{"task_id", task_id},           {"subject_kind", crayon::to_string(subject_kind)},
              {"subject_id", subject_id},     {"annotator_id", annotator_id},
              {"answer", crayon::to_string(answer)}, {"timestamp", timestamp}};
    return j.dump();
}

AnnotationRecord AnnotationRecord::from_json(const std::string& line) {
    const json j = json::parse(line);
    AnnotationRecord r;
    r.task_id = j.at("task_id").get<std::string>();
    r.subject_kind = parse_subject_kind(j.at("subject_kind").get<std::string>());
    r.subject_id = j.at("subject_id").get<std::string>();
    r.annotator_id = j.at("annotator_id").get<std::string>();
    r.answer = parse_answer(j.at("answer").get<std::string>());
    r.timestamp = j.value("timestamp", "");
    return r;
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const auto secs = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[80];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                  tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
    return buf;
}

AnnotationStore::AnnotationStore(fs::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
}

void AnnotationStore::append(const AnnotationRecord& r) {
    const std::string line = r.to_json() + "\n";
    std::lock_guard lock(mu_);
    const int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd < 0) throw std::runtime_error("cannot open annotation store " + path_.string() + ": " + std::strerror(errno));
    const ssize_t written = ::write(fd, line.data(), line.size());
    ::close(fd);
    if (written != static_cast<ssize_t>(line.size())) {
        throw std::runtime_error("short write to annotation store " + path_.string());
    }
}

std::vector<AnnotationRecord> AnnotationStore::read_all() const {
    std::lock_guard lock(mu_);
    if (!fs::exists(path_)) return {};
    return read_annotations(path_);
}

std::vector<AnnotationRecord> read_annotations(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read annotations " + path.string());
    std::vector<AnnotationRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) out.push_back(AnnotationRecord::from_json(line));
    }
    return out;
}

void write_annotations(const std::vector<AnnotationRecord>& records, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write annotations " + path.string());
    for (const auto& r : records) out << r.to_json() << '\n';
}

std::string to_string(AggregatedLabel l) {
    switch (l) {
        case AggregatedLabel::relevant:
            return "relevant";
        case AggregatedLabel::irrelevant:
            return "irrelevant";
        default:
            return "excluded";
    }
}

AggregatedLabel aggregate_pair(std::optional<Answer> first, std::optional<Answer> second) {
    if (first && second && *first == *second) {
        return *first == Answer::yes ? AggregatedLabel::relevant : AggregatedLabel::irrelevant;
    }
    return AggregatedLabel::excluded;
}

RelevanceSets aggregate_saliency(const std::vector<AnnotationRecord>& records, int required_responses) {
    if (required_responses != 1 && required_responses != 2) {
        throw std::invalid_argument("aggregate_saliency: required_responses must be 1 or 2");
    }
    struct Task {
        std::string subject_id;
        std::map<std::string, Answer> answers;  // annotator -> answer
    };
    std::map<std::string, Task> tasks;
    for (const auto& r : records) {
        if (r.subject_kind != SubjectKind::saliency) continue;
        Task& t = tasks[r.task_id];
        if (t.subject_id.empty()) t.subject_id = r.subject_id;
        if (t.subject_id != r.subject_id) throw std::invalid_argument("task " + r.task_id + " refers to two subjects");
        const auto [it, inserted] = t.answers.emplace(r.annotator_id, r.answer);
        if (!inserted && it->second != r.answer) {
            throw std::invalid_argument("annotator " + r.annotator_id + " gave conflicting answers on " + r.task_id);
        }
        if (static_cast<int>(t.answers.size()) > required_responses) {
            throw std::invalid_argument("task " + r.task_id + " has more than " + std::to_string(required_responses) +
                                        " responses");
        }
    }
    RelevanceSets out;
    for (const auto& [id, t] : tasks) {
        std::vector<Answer> a;
        for (const auto& [who, ans] : t.answers) a.push_back(ans);
        AggregatedLabel label;
        if (required_responses == 1) {
            label = a.empty() ? AggregatedLabel::excluded
                              : (a[0] == Answer::yes ? AggregatedLabel::relevant : AggregatedLabel::irrelevant);
        } else {
            label = aggregate_pair(a.size() > 0 ? std::optional(a[0]) : std::nullopt,
                                   a.size() > 1 ? std::optional(a[1]) : std::nullopt);
        }
        switch (label) {
            case AggregatedLabel::relevant:
                out.relevant.insert(t.subject_id);
                break;
            case AggregatedLabel::irrelevant:
                out.irrelevant.insert(t.subject_id);
                break;
            default:
                out.excluded.insert(t.subject_id);
        }
    }
    out.validate();
    return out;
}

Tensor mask_to_grid(const Mask& mask, int h, int w) {
    if (h < 1 || w < 1 || mask.height < h || mask.width < w) throw std::invalid_argument("mask_to_grid: bad grid size");
    Tensor out({h, w}, 0.0);
    for (int i = 0; i < h; ++i) {
        const int y0 = i * mask.height / h, y1 = ((i + 1) * mask.height + h - 1) / h;
        for (int j = 0; j < w; ++j) {
            const int x0 = j * mask.width / w, x1 = ((j + 1) * mask.width + w - 1) / w;
            bool any = false;
            for (int y = y0; y < y1 && !any; ++y) {
                for (int x = x0; x < x1 && !any; ++x) any = mask.at(y, x) != 0;
            }
            out[static_cast<std::size_t>(i) * w + j] = any ? 1.0 : 0.0;
        }
    }
    return out;
}

Answer oracle_annotate(const Tensor& map, const Tensor& grid_mask, double tau) {
    if (map.dims() != grid_mask.dims()) throw std::invalid_argument("oracle_annotate: map and mask shapes differ");
    if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("oracle_annotate: tau must lie in (0,1]");
    double inside = 0.0, total = 0.0;
    for (std::size_t i = 0; i < map.size(); ++i) {
        total += map[i];
        if (grid_mask[i] != 0.0) inside += map[i];
    }
    if (total <= 0.0) return Answer::no;
    return inside / total >= tau ? Answer::yes : Answer::no;
}

Answer oracle_annotate_patch(const Mask& mask, const Region& r, double tau) {
    if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("oracle_annotate_patch: tau must lie in (0,1]");
    if (r.x0 < 0 || r.y0 < 0 || r.x1 > mask.width || r.y1 > mask.height || r.x0 >= r.x1 || r.y0 >= r.y1) {
        throw std::invalid_argument("oracle_annotate_patch: region outside mask");
    }
    std::size_t inside = 0;
    for (int y = r.y0; y < r.y1; ++y) {
        for (int x = r.x0; x < r.x1; ++x) inside += mask.at(y, x);
    }
    const double area = static_cast<double>(r.x1 - r.x0) * (r.y1 - r.y0);
    return static_cast<double>(inside) / area >= tau ? Answer::yes : Answer::no;
}

std::vector<AnnotationRecord> oracle_annotate_saliency(const std::vector<SaliencyMap>& maps, const Dataset& data,
                                                       double tau, const std::string& annotator_id) {
    std::map<std::string, const GroupedExample*> by_id;
    for (const auto& e : data.examples) by_id[e.image_id] = &e;
    std::vector<AnnotationRecord> out;
    out.reserve(maps.size());
    const std::string stamp = utc_timestamp();
    for (const auto& m : maps) {
        const auto it = by_id.find(m.image_id);
        if (it == by_id.end()) throw std::invalid_argument("oracle: unknown image " + m.image_id);
        if (!it->second->mask) throw std::invalid_argument("oracle: image " + m.image_id + " has no mask");
        AnnotationRecord r;
        r.task_id = "sal:" + m.image_id;
        r.subject_kind = SubjectKind::saliency;
        r.subject_id = m.image_id;
        r.annotator_id = annotator_id;
        r.answer = oracle_annotate(m.values, mask_to_grid(*it->second->mask, m.height(), m.width()), tau);
        r.timestamp = stamp;
        out.push_back(std::move(r));
    }
    return out;
}

RelevanceSets subsample_annotations(const RelevanceSets& sets, long n, std::uint64_t seed) {
    if (n < 0) throw std::invalid_argument("subsample_annotations: n must be non-negative");
    std::vector<std::string> universe;
    universe.insert(universe.end(), sets.relevant.begin(), sets.relevant.end());
    universe.insert(universe.end(), sets.irrelevant.begin(), sets.irrelevant.end());
    universe.insert(universe.end(), sets.excluded.begin(), sets.excluded.end());
    std::sort(universe.begin(), universe.end());
    if (static_cast<std::size_t>(n) > universe.size()) {
        throw std::invalid_argument("subsample_annotations: n exceeds the number of annotated images");
    }
    std::vector<std::string> picked;
    std::mt19937_64 rng(seed);
    std::sample(universe.begin(), universe.end(), std::back_inserter(picked), n, rng);
    RelevanceSets out;
    for (const auto& id : picked) {
        if (sets.relevant.count(id)) out.relevant.insert(id);
        else if (sets.irrelevant.count(id)) out.irrelevant.insert(id);
        else out.excluded.insert(id);
    }
    return out;
}

}  // namespace crayon
