#pragma once

#include "kdvr/model.hpp"

namespace kdvr {

// Pairing by simultaneous bisection: both index sets are split in lockstep
// on the widest axis of their union box (ties x, then y, then z), each at
// its own median, until singletons pair up. match[i] is the b-index paired
// with a-point i. Equal sizes required.
std::vector<uint32_t> match_clouds(const IndexedPointCloud& a, const IndexedPointCloud& b);

// Pointwise blend along the matching: positions and raw channels lerp,
// confidences interpolate in log space. t = 0 returns a's data bitwise;
// t = 1 returns b's (in b's own order). Normals are left for the caller to
// re-estimate on the blended geometry.
IndexedPointCloud interpolate_cloud(const IndexedPointCloud& a, const IndexedPointCloud& b,
                                    const std::vector<uint32_t>& match, double t);

// interpolate_cloud plus model assembly: a's build options, lighting,
// render options; orientation reference lerped; fresh tree and normals.
SceneModel blend_models(const SceneModel& a, const SceneModel& b,
                        const std::vector<uint32_t>& match, double t);

// steps images at t = i/(steps-1) from the given camera. steps >= 2.
std::vector<Image> render_morph_sequence(const SceneModel& a, const SceneModel& b,
                                         const std::vector<uint32_t>& match, int steps,
                                         const Camera& camera);

}  // namespace kdvr
