#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cccnet/density.hpp"

namespace cccnet {

inline constexpr std::size_t kJointCount = 17;
inline constexpr std::size_t kKeypointValues = 3 * kJointCount;

// Canonical joint order: nose, eyes, ears, shoulders, elbows, wrists, hips,
// knees, ankles (left before right).
enum Joint : std::size_t {
  kNose = 0,
  kLeftEye,
  kRightEye,
  kLeftEar,
  kRightEar,
  kLeftShoulder,
  kRightShoulder,
  kLeftElbow,
  kRightElbow,
  kLeftWrist,
  kRightWrist,
  kLeftHip,
  kRightHip,
  kLeftKnee,
  kRightKnee,
  kLeftAnkle,
  kRightAnkle,
};

inline constexpr std::size_t kUpperBodyBegin = kLeftEye;   // joints 1..10
inline constexpr std::size_t kLowerBodyBegin = kLeftHip;   // joints 11..16

struct JointObservation {
  double x = 0.0;
  double y = 0.0;
  double confidence = 0.0;
};

/// One detected person: 17 joints in canonical order.
struct KeypointRecord {
  std::array<JointObservation, kJointCount> joints{};
  std::string image_id;
  std::optional<Category> label;
  int person = -1;  // index into the image's annotations, -1 if unknown

  const JointObservation& nose() const { return joints[kNose]; }
  /// 51 values: x, y, confidence per joint.
  std::vector<double> flatten() const;
};

/// Throws InvariantError on confidences outside [0,1] or non-finite values.
void validate(const KeypointRecord& record);

struct ImageAnnotations {
  std::string image_id;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<PersonAnnotation> persons;
};

struct ImageKeypoints {
  std::string image_id;
  std::vector<KeypointRecord> persons;
};

// JSON file formats:
//   annotations: {"image_id", "size": [H, W],
//                 "persons": [{"head": [x, y], "category": "sitting"}]}
//   keypoints:   {"image_id", "persons": [{"keypoints": [[x, y, c] x 17],
//                 "label": "standing", "person": 3}]}
std::string annotations_to_json(const ImageAnnotations& ann);
ImageAnnotations annotations_from_json(std::string_view text);
std::string keypoints_to_json(const ImageKeypoints& kp);
ImageKeypoints keypoints_from_json(std::string_view text);

ImageAnnotations read_annotations(const std::filesystem::path& path);
ImageKeypoints read_keypoints(const std::filesystem::path& path);

}  // namespace cccnet
