#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "crayon/data.hpp"
#include "crayon/guidance.hpp"
#include "crayon/saliency.hpp"

namespace crayon {

enum class SubjectKind { saliency, patch };
enum class Answer { yes, no };

std::string to_string(SubjectKind k);
std::string to_string(Answer a);
SubjectKind parse_subject_kind(const std::string& s);
Answer parse_answer(const std::string& s);

struct AnnotationRecord {
    std::string task_id;
    SubjectKind subject_kind = SubjectKind::saliency;
    std::string subject_id;  // image_id or patch_id
    std::string annotator_id;
    Answer answer = Answer::no;
    std::string timestamp;  // ISO 8601, UTC

    std::string to_json() const;
    static AnnotationRecord from_json(const std::string& line);
};

std::string utc_timestamp();

// Append-only JSONL file. Each record is written with a single write(2) on an
// O_APPEND descriptor, so concurrent writers never interleave lines.
class AnnotationStore {
  public:
    explicit AnnotationStore(std::filesystem::path path);
    void append(const AnnotationRecord& r);
    std::vector<AnnotationRecord> read_all() const;
    const std::filesystem::path& path() const { return path_; }

  private:
    std::filesystem::path path_;
    mutable std::mutex mu_;
};

std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path);
void write_annotations(const std::vector<AnnotationRecord>& records, const std::filesystem::path& path);

enum class AggregatedLabel { relevant, irrelevant, excluded };
std::string to_string(AggregatedLabel l);

// Two-annotator rule: both yes -> relevant, both no -> irrelevant, else excluded.
AggregatedLabel aggregate_pair(std::optional<Answer> first, std::optional<Answer> second);

// Saliency records only (patch records are ignored). Groups by task id.
// required_responses = 1 is the single-annotator (oracle) mode where the one
// answer is final. Throws on more responses than allowed or on an annotator
// giving two different answers; exact duplicates count once.
RelevanceSets aggregate_saliency(const std::vector<AnnotationRecord>& records, int required_responses = 2);

// Any-pixel pooling of an image mask onto an h x w grid: a cell is foreground
// when any pixel it covers is.
Tensor mask_to_grid(const Mask& mask, int h, int w);

// yes iff (mass inside mask) / (total mass) >= tau; an all-zero map is no.
Answer oracle_annotate(const Tensor& map, const Tensor& grid_mask, double tau);

// yes iff the foreground covers at least tau of the rectangle.
Answer oracle_annotate_patch(const Mask& mask, const Region& region, double tau);

// One record per map, task id "sal:<image_id>".
std::vector<AnnotationRecord> oracle_annotate_saliency(const std::vector<SaliencyMap>& maps, const Dataset& data,
                                                       double tau, const std::string& annotator_id = "oracle");

// Uniform sample of n ids (without replacement) from R u I u excluded; labels
// of the others are dropped.
RelevanceSets subsample_annotations(const RelevanceSets& sets, long n, std::uint64_t seed);

}  // namespace crayon
