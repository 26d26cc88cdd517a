#include "cccnet/keypoints.hpp"

#include <cmath>

#include <json.hpp>

#include "cccnet/binary_io.hpp"
#include "cccnet/error.hpp"

namespace cccnet {

using nlohmann::json;

std::vector<double> KeypointRecord::flatten() const {
  std::vector<double> out;
  out.reserve(kKeypointValues);
  for (const auto& j : joints) {
    out.push_back(j.x);
    out.push_back(j.y);
    out.push_back(j.confidence);
  }
  return out;
}

void validate(const KeypointRecord& record) {
  for (std::size_t i = 0; i < kJointCount; ++i) {
    const auto& j = record.joints[i];
    if (!std::isfinite(j.x) || !std::isfinite(j.y)) {
      throw InvariantError("joint " + std::to_string(i) + " has non-finite coordinates");
    }
    if (!(j.confidence >= 0.0 && j.confidence <= 1.0)) {
      throw InvariantError("joint " + std::to_string(i) + " confidence " +
                           std::to_string(j.confidence) + " outside [0,1]");
    }
  }
}

std::string annotations_to_json(const ImageAnnotations& ann) {
  json persons = json::array();
  for (const auto& p : ann.persons) {
    persons.push_back({{"head", {p.head.x, p.head.y}},
                       {"category", std::string(category_name(p.category))}});
  }
  json doc = {{"image_id", ann.image_id},
              {"size", {ann.height, ann.width}},
              {"persons", persons}};
  return doc.dump(1) + "\n";
}

ImageAnnotations annotations_from_json(std::string_view text) {
  try {
    const json doc = json::parse(text);
    ImageAnnotations ann;
    ann.image_id = doc.value("image_id", std::string{});
    const auto& size = doc.at("size");
    if (!size.is_array() || size.size() != 2) {
      throw FormatError("annotations: \"size\" must be [H, W]");
    }
    ann.height = size[0].get<std::size_t>();
    ann.width = size[1].get<std::size_t>();
    for (const auto& p : doc.at("persons")) {
      const auto& head = p.at("head");
      if (!head.is_array() || head.size() != 2) {
        throw FormatError("annotations: \"head\" must be [x, y]");
      }
      ann.persons.push_back({{head[0].get<double>(), head[1].get<double>()},
                             parse_category(p.at("category").get<std::string>())});
    }
    return ann;
  } catch (const json::exception& e) {
    throw FormatError(std::string("annotations: ") + e.what());
  }
}

std::string keypoints_to_json(const ImageKeypoints& kp) {
  json persons = json::array();
  for (const auto& r : kp.persons) {
    json joints = json::array();
    for (const auto& j : r.joints) joints.push_back({j.x, j.y, j.confidence});
    json person = {{"keypoints", joints}};
    if (r.label) person["label"] = std::string(category_name(*r.label));
    if (r.person >= 0) person["person"] = r.person;
    persons.push_back(std::move(person));
  }
  json doc = {{"image_id", kp.image_id}, {"persons", persons}};
  return doc.dump(1) + "\n";
}

ImageKeypoints keypoints_from_json(std::string_view text) {
  try {
    const json doc = json::parse(text);
    ImageKeypoints kp;
    kp.image_id = doc.value("image_id", std::string{});
    for (const auto& p : doc.at("persons")) {
      const auto& joints = p.at("keypoints");
      if (!joints.is_array() || joints.size() != kJointCount) {
        throw FormatError("keypoints: each person needs exactly 17 joints");
      }
      KeypointRecord r;
      r.image_id = kp.image_id;
      for (std::size_t i = 0; i < kJointCount; ++i) {
        const auto& j = joints[i];
        if (!j.is_array() || j.size() != 3) {
          throw FormatError("keypoints: joint " + std::to_string(i) + " must be [x, y, c]");
        }
        r.joints[i] = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
      }
      if (p.contains("label")) r.label = parse_category(p.at("label").get<std::string>());
      if (p.contains("person")) r.person = p.at("person").get<int>();
      validate(r);
      kp.persons.push_back(std::move(r));
    }
    return kp;
  } catch (const json::exception& e) {
    throw FormatError(std::string("keypoints: ") + e.what());
  }
}

ImageAnnotations read_annotations(const std::filesystem::path& path) {
  return annotations_from_json(binio::read_text(path));
}

ImageKeypoints read_keypoints(const std::filesystem::path& path) {
  return keypoints_from_json(binio::read_text(path));
}

}  // namespace cccnet
