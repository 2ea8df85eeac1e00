#include "ebnet/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "ebnet/image_io.hpp"

namespace ebnet {

using json = nlohmann::json;

namespace {

void check_map(const AttentionMap& map) {
  if (map.values.ndim() != 3 || map.values.dim(0) != 1) {
    throw ShapeMismatch("attention map must be 1 x h x w, got " + map.values.shape_str());
  }
}

BBox mask_bbox(const Tensor& mask) {
  const int h = mask.dim(1), w = mask.dim(2);
  BBox b{w, h, -1, -1};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (mask[static_cast<std::int64_t>(y) * w + x] != 0.0) {
        b.x0 = std::min(b.x0, x);
        b.y0 = std::min(b.y0, y);
        b.x1 = std::max(b.x1, x);
        b.y1 = std::max(b.y1, y);
      }
    }
  }
  if (b.x1 < 0) throw EmptyProposal("mask has no set pixels");
  return b;
}

}  // namespace

bool pointing_hit(const AttentionMap& map, const std::vector<GroundTruthRegion>& regions,
                  int margin_px) {
  check_map(map);
  const int h = map.values.dim(1), w = map.values.dim(2);
  const std::int64_t flat = map.values.argmax();
  const int py = static_cast<int>(flat / w);
  const int px = static_cast<int>(flat % w);

  for (const GroundTruthRegion& r : regions) {
    if (r.bbox) {
      const BBox& b = *r.bbox;
      if (px >= b.x0 - margin_px && px <= b.x1 + margin_px && py >= b.y0 - margin_px &&
          py <= b.y1 + margin_px) {
        return true;
      }
    } else if (r.mask) {
      const Tensor& m = *r.mask;
      if (m.dim(1) != h || m.dim(2) != w) {
        throw ShapeMismatch("mask is " + m.shape_str() + ", map is " + map.values.shape_str());
      }
      const int y0 = std::max(0, py - margin_px), y1 = std::min(h - 1, py + margin_px);
      const int x0 = std::max(0, px - margin_px), x1 = std::min(w - 1, px + margin_px);
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          if (m[static_cast<std::int64_t>(y) * w + x] != 0.0) return true;
        }
      }
    }
  }
  return false;
}

PointingReport pointing_game(const std::vector<std::pair<std::string, bool>>& results,
                             const std::vector<std::string>& expected_categories) {
  std::vector<std::string> order = expected_categories;
  std::map<std::string, std::pair<std::int64_t, std::int64_t>> tally;
  for (const std::string& c : order) tally.emplace(c, std::make_pair(0, 0));

  for (const auto& [category, hit] : results) {
    auto it = tally.find(category);
    if (it == tally.end()) {
      if (!expected_categories.empty()) {
        throw EmptyCategory("result for unexpected category '" + category + "'");
      }
      it = tally.emplace(category, std::make_pair(0, 0)).first;
      order.push_back(category);
    }
    if (hit) {
      ++it->second.first;
    } else {
      ++it->second.second;
    }
  }

  if (order.empty()) throw EmptyCategory("no pointing results at all");

  PointingReport report;
  double total = 0.0;
  for (const std::string& c : order) {
    const auto [hits, misses] = tally.at(c);
    if (hits + misses == 0) throw EmptyCategory("category '" + c + "' has no pointing results");
    CategoryAccuracy acc;
    acc.category = c;
    acc.hits = hits;
    acc.misses = misses;
    acc.accuracy = static_cast<double>(hits) / static_cast<double>(hits + misses);
    total += acc.accuracy;
    report.per_category.push_back(std::move(acc));
  }
  report.mean_accuracy = total / static_cast<double>(order.size());
  return report;
}

DatasetManifest filter_difficult(const DatasetManifest& manifest) {
  DatasetManifest out;
  out.categories = manifest.categories;
  for (const DatasetEntry& entry : manifest.entries) {
    DatasetEntry kept = entry;
    kept.regions.clear();
    kept.categories.clear();

    const std::int64_t image_area = static_cast<std::int64_t>(entry.width) * entry.height;
    std::vector<char> grid(static_cast<std::size_t>(image_area));

    for (const std::string& category : entry.categories) {
      bool has_distracter = false;
      for (const GroundTruthRegion& r : entry.regions) {
        if (r.category != category) {
          has_distracter = true;
          break;
        }
      }
      if (!has_distracter) continue;

      // union area of this category's regions, by rasterization
      std::fill(grid.begin(), grid.end(), 0);
      for (const GroundTruthRegion& r : entry.regions) {
        if (r.category != category) continue;
        if (r.bbox) {
          const int x0 = std::max(0, r.bbox->x0), x1 = std::min(entry.width - 1, r.bbox->x1);
          const int y0 = std::max(0, r.bbox->y0), y1 = std::min(entry.height - 1, r.bbox->y1);
          for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
              grid[static_cast<std::size_t>(y) * entry.width + x] = 1;
            }
          }
        } else if (r.mask) {
          for (std::int64_t i = 0; i < r.mask->numel(); ++i) {
            if ((*r.mask)[i] != 0.0) grid[static_cast<std::size_t>(i)] = 1;
          }
        }
      }
      std::int64_t area = 0;
      for (char g : grid) area += g;

      if (4 * area < image_area) {
        kept.categories.push_back(category);
        for (const GroundTruthRegion& r : entry.regions) {
          if (r.category == category) kept.regions.push_back(r);
        }
      }
    }
    if (!kept.regions.empty()) out.entries.push_back(std::move(kept));
  }
  return out;
}

BBox extract_bbox(const AttentionMap& map, double alpha) {
  check_map(map);
  const int h = map.values.dim(1), w = map.values.dim(2);
  const double tau = alpha * (map.values.sum() / static_cast<double>(map.values.numel()));
  BBox b{w, h, -1, -1};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (map.values[static_cast<std::int64_t>(y) * w + x] >= tau) {
        b.x0 = std::min(b.x0, x);
        b.y0 = std::min(b.y0, y);
        b.x1 = std::max(b.x1, x);
        b.y1 = std::max(b.y1, y);
      }
    }
  }
  if (b.x1 < 0) throw EmptyAttention("no pixel reaches the threshold");
  return b;
}

double iou(const BBox& a, const BBox& b) {
  const int iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0) + 1;
  const int ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0) + 1;
  if (iw <= 0 || ih <= 0) return 0.0;
  const std::int64_t inter = static_cast<std::int64_t>(iw) * ih;
  const std::int64_t uni = bbox_area(a) + bbox_area(b) - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<ScoredBox> score_segments(const AttentionMap& map,
                                      const std::vector<Segment>& proposals, double gamma) {
  check_map(map);
  if (proposals.empty()) throw EmptyProposal("no segments to score");
  const int h = map.values.dim(1), w = map.values.dim(2);

  std::vector<ScoredBox> scored;
  scored.reserve(proposals.size());
  for (const Segment& seg : proposals) {
    double mass = 0.0;
    std::int64_t area = 0;
    BBox box;
    if (seg.bbox) {
      box = *seg.bbox;
      if (box.x0 < 0 || box.y0 < 0 || box.x1 >= w || box.y1 >= h || box.x0 > box.x1 ||
          box.y0 > box.y1) {
        throw ShapeMismatch("segment box falls outside the map");
      }
      area = bbox_area(box);
      for (int y = box.y0; y <= box.y1; ++y) {
        for (int x = box.x0; x <= box.x1; ++x) {
          mass += map.values[static_cast<std::int64_t>(y) * w + x];
        }
      }
    } else if (seg.mask) {
      const Tensor& m = *seg.mask;
      if (m.dim(1) != h || m.dim(2) != w) {
        throw ShapeMismatch("segment mask is " + m.shape_str() + ", map is " +
                            map.values.shape_str());
      }
      for (std::int64_t i = 0; i < m.numel(); ++i) {
        if (m[i] != 0.0) {
          mass += map.values[i];
          ++area;
        }
      }
      if (area == 0) throw EmptyProposal("segment mask has no set pixels");
      box = mask_bbox(m);
    } else {
      throw EmptyProposal("segment carries neither a box nor a mask");
    }
    scored.push_back({box, mass / std::pow(static_cast<double>(area), gamma)});
  }

  std::stable_sort(scored.begin(), scored.end(),
                   [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
  return scored;
}

std::vector<ScoredBox> nms(const std::vector<ScoredBox>& boxes, double iou_threshold) {
  std::vector<ScoredBox> sorted = boxes;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
  std::vector<ScoredBox> kept;
  for (const ScoredBox& candidate : sorted) {
    bool suppressed = false;
    for (const ScoredBox& k : kept) {
      if (iou(candidate.box, k.box) >= iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(candidate);
  }
  return kept;
}

int recall_at_k(const std::vector<ScoredBox>& scored, const std::vector<BBox>& gt, int k,
                double iou_threshold) {
  if (k < 1) throw IndexOutOfRange("recall needs k >= 1");
  const std::size_t top = std::min(static_cast<std::size_t>(k), scored.size());
  for (std::size_t i = 0; i < top; ++i) {
    for (const BBox& g : gt) {
      if (iou(scored[i].box, g) >= iou_threshold) return 1;
    }
  }
  return 0;
}

namespace {

BBox parse_bbox(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 4) {
    throw ParseError(where + ": bbox must be [x0, y0, x1, y1]");
  }
  BBox b{v[0].get<int>(), v[1].get<int>(), v[2].get<int>(), v[3].get<int>()};
  if (b.x0 > b.x1 || b.y0 > b.y1) throw ParseError(where + ": bbox corners out of order");
  return b;
}

std::string resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  if (path.is_absolute()) return p;
  return (base / path).string();
}

}  // namespace

DatasetManifest load_dataset_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset manifest " + path);
  const std::filesystem::path base = std::filesystem::path(path).parent_path();

  DatasetManifest manifest;
  bool pinned = false;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    const std::string where = path + ":" + std::to_string(lineno);

    if (!j.contains("image")) {
      if (manifest.entries.empty() && !pinned && j.contains("categories")) {
        for (const json& c : j.at("categories")) {
          manifest.categories.push_back(c.get<std::string>());
        }
        pinned = true;
        continue;
      }
      throw ParseError(where + ": entry without an image");
    }

    DatasetEntry entry;
    entry.image = j.at("image").get<std::string>();
    entry.image_path = resolve(base, entry.image);
    const std::vector<int> extents = pnm_extents(entry.image_path);
    entry.height = extents[1];
    entry.width = extents[2];

    if (j.contains("regions")) {
      for (const json& rj : j.at("regions")) {
        GroundTruthRegion r;
        r.category = rj.value("category", std::string());
        if (r.category.empty()) throw ParseError(where + ": region without a category");
        if (rj.contains("bbox")) {
          r.bbox = parse_bbox(rj.at("bbox"), where);
        } else if (rj.contains("mask_path")) {
          Tensor mask = read_mask_pgm(resolve(base, rj.at("mask_path").get<std::string>()));
          if (mask.dim(1) != entry.height || mask.dim(2) != entry.width) {
            throw ShapeMismatch(where + ": mask extents differ from the image");
          }
          r.mask = std::move(mask);
        } else {
          throw ParseError(where + ": region needs a bbox or a mask_path");
        }
        if (std::find(entry.categories.begin(), entry.categories.end(), r.category) ==
            entry.categories.end()) {
          entry.categories.push_back(r.category);
        }
        entry.regions.push_back(std::move(r));
      }
    }

    for (const std::string& c : entry.categories) {
      if (std::find(manifest.categories.begin(), manifest.categories.end(), c) ==
          manifest.categories.end()) {
        if (pinned) {
          throw ParseError(where + ": category '" + c + "' is not in the declared list");
        }
        manifest.categories.push_back(c);
      }
    }
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

std::map<std::string, std::vector<Segment>> load_proposals_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open proposals " + path);
  const std::filesystem::path base = std::filesystem::path(path).parent_path();

  std::map<std::string, std::vector<Segment>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    const std::string where = path + ":" + std::to_string(lineno);
    if (!j.contains("image")) throw ParseError(where + ": proposal line without an image");

    std::vector<Segment> segments;
    if (j.contains("segments")) {
      for (const json& sj : j.at("segments")) {
        Segment seg;
        if (sj.is_array()) {
          seg.bbox = parse_bbox(sj, where);
        } else if (sj.is_object() && sj.contains("mask_path")) {
          seg.mask = read_mask_pgm(resolve(base, sj.at("mask_path").get<std::string>()));
        } else {
          throw ParseError(where + ": segment must be a bbox array or {\"mask_path\"}");
        }
        segments.push_back(std::move(seg));
      }
    }
    out[j.at("image").get<std::string>()] = std::move(segments);
  }
  return out;
}

}  // namespace ebnet
