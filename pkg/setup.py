#!/usr/bin/env python
from setuptools import setup, find_packages

setup(
    name="depth_splat",
    version="0.0.1",
    description="Few-shot Gaussian splatting regularized by monocular depth, on a CPU reference rasterizer",
    packages=find_packages(exclude=["examples", "examples.*"]),
    install_requires=[
        "numpy",
        "pandas",
        # Only plotly.graph_objs and figure_factory are used, both stable across 4.x-6.x (4.x does not import under numpy 2)
        "plotly >= 4, < 7",
        # PNG images in datasets and renders
        "Pillow",
        # PLY point-cloud export
        "plyfile",
        "scipy",
        "tqdm",
    ],
    entry_points={"console_scripts": ["depth-splat=depth_splat.cli:main"]},
    include_package_data=True,
)
