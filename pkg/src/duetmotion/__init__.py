"""Two-person interaction motion synthesis on a simplified parametric skeleton.

The toolkit is organized around the interactive pose: a pair of poses in close
proximity at one time instant. One diffusion model animates an interactive pose
into a short two-person clip, a second one generates interactive poses from a
single pose, a text prompt, both, or nothing. Everything runs on a procedural
22-joint skeleton with sphere-proxy geometry, so the whole pipeline is
verifiable on a CPU.
"""

__version__ = "0.1.0"
