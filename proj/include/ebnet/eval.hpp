#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ebnet/excitation.hpp"

namespace ebnet {

// Inclusive pixel coordinates: a single pixel is (x,y,x,y) with area 1.
struct BBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

inline std::int64_t bbox_area(const BBox& b) {
  return static_cast<std::int64_t>(b.x1 - b.x0 + 1) * (b.y1 - b.y0 + 1);
}

// Exactly one of bbox / mask is set. Masks are 1 x H x W with 0/1 entries at
// image resolution.
struct GroundTruthRegion {
  std::string category;
  std::optional<BBox> bbox;
  std::optional<Tensor> mask;
};

struct Segment {
  std::optional<BBox> bbox;
  std::optional<Tensor> mask;
};

struct DatasetEntry {
  std::string image;       // verbatim manifest string; the key proposals use
  std::string image_path;  // resolved against the manifest location
  int width = 0, height = 0;
  std::vector<GroundTruthRegion> regions;
  std::vector<std::string> categories;  // unique, first-appearance order
};

struct DatasetManifest {
  std::vector<DatasetEntry> entries;
  std::vector<std::string> categories;
};

struct ScoredBox {
  BBox box;
  double score = 0.0;
};

// Hit iff the map's argmax pixel (ties: lowest flat index) falls inside any
// region once dilated by margin_px: coordinate expansion for boxes, Chebyshev
// dilation for masks. The map must already be at image resolution.
bool pointing_hit(const AttentionMap& map, const std::vector<GroundTruthRegion>& regions,
                  int margin_px = 15);

struct CategoryAccuracy {
  std::string category;
  std::int64_t hits = 0, misses = 0;
  double accuracy = 0.0;
};

struct PointingReport {
  std::vector<CategoryAccuracy> per_category;
  double mean_accuracy = 0.0;  // unweighted over categories
};

// Aggregates (category, hit) outcomes. When expected_categories is given it
// pins the report order and any category without outcomes raises
// EmptyCategory; otherwise categories appear in first-result order.
PointingReport pointing_game(const std::vector<std::pair<std::string, bool>>& results,
                             const std::vector<std::string>& expected_categories = {});

// Keeps (image, category) pairs where the category's region union covers
// strictly less than a quarter of the image and at least one region of a
// different category shares the image. Entries left without regions are
// dropped; the global category list is preserved.
DatasetManifest filter_difficult(const DatasetManifest& manifest);

// Tightest box over pixels >= alpha * mean(map). The >= comparator makes
// alpha = 0 select every positive pixel. EmptyAttention when nothing passes
// (possible once alpha exceeds max/mean).
BBox extract_bbox(const AttentionMap& map, double alpha);

double iou(const BBox& a, const BBox& b);

// f(R) = (attention sum inside R) / area(R)^gamma, masks reported by their
// tight bbox, sorted by descending score (stable: input order breaks ties).
std::vector<ScoredBox> score_segments(const AttentionMap& map,
                                      const std::vector<Segment>& proposals, double gamma);

// Greedy descending-score suppression: drop any box with IoU >= threshold
// against an already-kept box.
std::vector<ScoredBox> nms(const std::vector<ScoredBox>& boxes, double iou_threshold = 0.7);

// 1 iff any of the first k boxes overlaps any ground-truth box at >= threshold.
int recall_at_k(const std::vector<ScoredBox>& scored, const std::vector<BBox>& gt, int k,
                double iou_threshold = 0.5);

// JSON lines, one object per image:
//   {"image": path, "regions": [{"category": c, "bbox": [x0,y0,x1,y1]} |
//                               {"category": c, "mask_path": path}]}
// An optional first line {"categories": [...]} pins the category order.
// Relative paths resolve against the manifest's directory; image extents come
// from the image headers.
DatasetManifest load_dataset_jsonl(const std::string& path);

// JSON lines {"image": path, "segments": [[x0,y0,x1,y1] | {"mask_path": p}]},
// keyed by the verbatim image string.
std::map<std::string, std::vector<Segment>> load_proposals_jsonl(const std::string& path);

}  // namespace ebnet
