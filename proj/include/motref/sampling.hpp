#pragma once

// Sub-pixel bilinear sampling, backward warping, and backward-flow alignment.
// Coordinates follow the project convention: x right, y down, origin at the
// center of pixel (0,0). Out-of-bounds coordinates clamp to the border before
// interpolation, so no synthetic zeros leak into residuals near edges.

#include "motref/core.hpp"

namespace motref {

// Bilinear interpolation of a scalar plane at (x, y). Throws on a non-finite
// point or an empty plane.
float bilinear_sample(const std::vector<float>& plane, int width, int height,
                      float x, float y);

// Bilinear sample of one frame channel.
float bilinear_sample_channel(const Frame& frame, int channel, float x, float y);

// Bilinear sample of a flow field (both components).
Vec2f bilinear_sample_flow(const FlowField& flow, float x, float y);

// out(p) = target(p + flow(p)) per channel; output clamped to [-0.5, 0.5].
Frame warp_backward(const Frame& target, const FlowField& flow);

// Aligned backward flow: w_hat(p) = backward(p + forward(p)) per component.
FlowField align_backward_flow(const FlowField& forward, const FlowField& backward);

// Squared L2 color difference (summed over the 3 channels) between source and
// the flow-aligned target, per pixel.
std::vector<float> residual_map(const Frame& source, const Frame& target,
                                const FlowField& flow);

}  // namespace motref
