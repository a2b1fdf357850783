#pragma once

#include <vector>

#include "vstain/core/tensor.hpp"
#include "vstain/dataio.hpp"

namespace vstain::masking {

// Otsu threshold of a sample, searched over `bins` equal-width bins between
// its min and max; returns the upper edge of the best lower class.
double otsu_threshold(const std::vector<double>& values, int bins = 256);

// 3x3 box filter with edge replication; `values` is a width*height plane.
std::vector<double> box3(const std::vector<double>& values, int width, int height);

// Largest 8-connected component of a binary plane (ties: first in scan order).
std::vector<std::uint8_t> largest_component(const std::vector<std::uint8_t>& binary, int width, int height);

// Convex hull of the set pixels (pixel centres as integer points),
// counter-clockwise without collinear points.
std::vector<Point> convex_hull(const std::vector<std::uint8_t>& binary, int width, int height);
// Pixels whose centre lies inside or on the hull polygon.
Image8 fill_hull(const std::vector<Point>& hull, int width, int height);

// Rigid-sample segmentation hull of one modality: smooth, Otsu, largest
// component, convex hull. Histology is converted to luminance and inverted.
// InputError when the segmentation is empty.
Image8 ct_hull(const CtSlice& ct);
Image8 histology_hull(const HistologySlide& histology);

// Intersection of the CT hull, the histology hull and every manual mask
// (true = keep). An empty result is returned (not thrown) and its
// provenance says it is untrainable.
CorrespondenceMask build_correspondence_mask(const ImagePair& pair, const std::vector<CorrespondenceMask>& manual = {});

// Pixels where the mask is false take `fill` (in every channel).
Image8 apply_mask(const Image8& image, const CorrespondenceMask& mask, std::uint8_t fill);
Image8 apply_mask(const Image8& image, const CorrespondenceMask& mask, const std::vector<std::uint8_t>& fill);
Gray16 apply_mask(const Gray16& image, const CorrespondenceMask& mask, std::uint16_t fill);

// Mean |a - b| over mask-true elements, mask [N,1,H,W] broadcast over
// channels or full-shape; 0 for an empty mask.
template <typename T>
T masked_l1(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& mask);

}  // namespace vstain::masking
