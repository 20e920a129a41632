#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssl2/volume/volume.hpp"

namespace ssl2 {

// Minimal RGB8 PNG writer (zlib-compressed, no interlace).
void write_png_rgb(const std::string& path, int width, int height,
                   const std::vector<std::uint8_t>& rgb);

// Axial-slice overlay of a prediction against ground truth on the FLAIR
// background: green = true positive, red = false negative, yellow = false
// positive. slice < 0 picks the slice with the most ground-truth voxels.
void render_overlay_png(const std::string& path, const Volume<float>& flair,
                        const Volume<float>& gt_mask, const Volume<float>& pred_mask,
                        index_t slice = -1);

// Box plot (median, quartile box, whiskers, outlier dots) per labelled group.
void render_boxplot_svg(const std::string& path, const std::string& title,
                        const std::vector<std::string>& labels,
                        const std::vector<std::vector<double>>& groups);

}  // namespace ssl2
