#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "glassbox/features.hpp"
#include "glassbox/mask.hpp"

// Consistency analysis: Likert aggregation into PCR/LCR, ICR, joint
// distributions split by correctness, automated oracle ratios, diagnosis.
namespace glassbox::consistency {

enum class Question { pcr, lcr };
enum class Answer { strongly_agree, agree, disagree, strongly_disagree };
enum class Merged { agree, disagree };

std::string_view to_string(Question q);
std::string_view to_string(Answer a);
Question parse_question(std::string_view token, std::size_t row = 0);
/// Throws ParseError naming the row for unknown tokens.
Answer parse_answer(std::string_view token, std::size_t row = 0);

/// strongly_agree/agree -> agree; disagree/strongly_disagree -> disagree.
Merged merge_likert(Answer a);

struct WorkerResponse {
  std::string task_id;
  std::uint64_t sample_id = 0;
  Question question = Question::pcr;
  std::string worker_id;
  Answer answer = Answer::agree;

  friend bool operator==(const WorkerResponse&, const WorkerResponse&) = default;
};

inline constexpr std::string_view kResponseCsvHeader = "task_id,sample_id,question,worker_id,answer";

/// Parses the response CSV (header required). Rows are numbered from 1 for
/// the header. Throws ParseError or UniquenessError.
std::vector<WorkerResponse> parse_responses_csv(std::string_view text);
std::string format_response_row(const WorkerResponse& r);
std::string responses_to_csv(std::span<const WorkerResponse> rows);
/// Throws UniquenessError on a repeated (sample, question, worker).
void check_unique(std::span<const WorkerResponse> rows);

/// Fraction of merged "agree" answers. Throws MissingDataError when empty.
double ratio(std::uint64_t sample_id, Question question, std::span<const WorkerResponse> responses);

/// Maximum softmax probability.
double icr(std::span<const float> softmax);

struct ConsistencyRecord {
  std::uint64_t sample_id = 0;
  double pcr = 0.0;
  double lcr = 0.0;
  double icr = 0.0;
  bool correct = false;

  friend bool operator==(const ConsistencyRecord&, const ConsistencyRecord&) = default;
};

struct SampleOutcome {
  std::uint64_t sample_id = 0;
  std::size_t predicted_label = 0;
  std::size_t ground_truth = 0;
  double max_softmax = 0.0;
};

/// One record per outcome, aggregating the human responses. Throws
/// MissingDataError listing samples lacking either question, UniquenessError
/// on duplicate rows, ValidationError for responses about unknown samples.
std::vector<ConsistencyRecord> build_records(std::span<const SampleOutcome> outcomes,
                                             std::span<const WorkerResponse> responses);

enum class Population { correct, incorrect };
std::string_view to_string(Population p);

/// B x B counts; row = PCR bin, column = LCR bin. Bin j covers [j/B, (j+1)/B),
/// the last bin is closed at 1.
struct JointDistribution {
  std::size_t bins = 5;
  Population population = Population::correct;
  std::vector<std::size_t> counts;

  std::size_t at(std::size_t pcr_bin, std::size_t lcr_bin) const { return counts[pcr_bin * bins + lcr_bin]; }
  std::size_t total() const;
  std::vector<double> normalized() const;
};

std::size_t bin_of(double ratio, std::size_t bins);
JointDistribution joint_distribution(std::span<const ConsistencyRecord> records, std::size_t bins,
                                     Population population);

/// Fraction of receptive-field masks overlapping some attribute mask by at
/// least `min_overlap` of the receptive-field area. Empty input -> 0.
double oracle_pcr(std::span<const Mask> rf_masks, std::span<const Mask> attribute_masks, double min_overlap = 0.25);

/// |attrs(e) ∩ A(ŷ)| / |attrs(e)|, 0 when attrs(e) is empty.
double oracle_lcr(const std::set<std::size_t>& inference_attributes, const std::set<std::size_t>& class_attributes);

/// Union of the labels assigned to every feature set in e.
std::set<std::size_t> inference_attributes(const features::BinaryFeatureVector& e,
                                           const std::map<std::size_t, std::set<std::size_t>>& assignments);

struct DiagnosisThresholds {
  double low = 0.5;   // ratios below are "low"
  double high = 0.5;  // ratios at or above are "high"
};

enum class Suggestion { feature_extraction, decision_making, data_collection };
std::string_view to_string(Suggestion s);

struct Diagnosis {
  Suggestion kind = Suggestion::feature_extraction;
  std::string text;
};

/// Rule table, in this order: low PCR -> feature extraction; low LCR ->
/// decision making; incorrect with high PCR and LCR -> data collection.
std::vector<Diagnosis> diagnose(const ConsistencyRecord& record, const DiagnosisThresholds& thresholds = {});

std::string record_to_json_line(const ConsistencyRecord& r);
std::string records_to_jsonl(std::span<const ConsistencyRecord> records);
std::vector<ConsistencyRecord> parse_records_jsonl(std::string_view text);

}  // namespace glassbox::consistency
