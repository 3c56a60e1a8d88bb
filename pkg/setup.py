from setuptools import setup, find_packages

setup(
    name="memory_vqa",
    version="0.1.0",
    description="package for memory-augmented surgical visual question answering",
    packages=find_packages(where="src"),
    package_dir={"": "src"},
    python_requires=">=3.10",
    install_requires=[
        "numpy",
        "pandas",
        "pyyaml",
        "matplotlib",
        "seaborn",
        "scikit-learn",
        "httpx",
        "tenacity",
        "tqdm",
    ],
    extras_require={
        "dev": ["pytest", "black"],
    },
    package_data={"memory_vqa": ["templates/*.txt"]},
    include_package_data=True,
    entry_points={"console_scripts": ["memory-vqa=memory_vqa.cli:main"]},
)
