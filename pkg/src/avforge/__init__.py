"""Rigged Gaussian-splat head avatars driven by a morphable head model.

Subpackages:

- ``rig``       morphable head model, skinning, conditioning-map rendering
- ``mesh``      marching cubes, smoothing, normal refinement, face voting
- ``gsplat``    triangle-bound Gaussian clouds and the splat rasterizer
- ``guidance``  denoiser oracles, DDIM inversion, ISM gradients, SDEdit
- ``stages``    the five optimization stages
- ``io``        file formats
"""

__version__ = "0.1.0"
