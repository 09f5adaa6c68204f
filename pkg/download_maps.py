#!/usr/bin/env python3
"""
Benchmark map downloader.
Fetches MovingAI grid maps into the maps directory for offline dataset generation.
"""

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import List

import requests

import config
from mapf_core import MapParseError, parse_movingai_map

logger = logging.getLogger(__name__)


def download_map(server_url: str, name: str, output_dir: str, force: bool = False) -> bool:
    """
    Download a single .map file and check that it parses.

    Args:
        server_url: Base URL of the benchmark server
        name: Map name without extension
        output_dir: Directory to save the map
        force: Fetch even when a non-empty file exists; it is only replaced
            once the download parses

    Returns:
        True if the map is present afterwards, False otherwise
    """
    map_path = os.path.join(output_dir, f"{name}.map")
    if not force and os.path.exists(map_path) and os.path.getsize(map_path) > 0:
        return True

    url = f"{server_url}/{name}.map"
    try:
        headers = {'User-Agent': 'mapf-replan-predictor/1.0 (research dataset generation)'}
        response = requests.get(url, headers=headers, timeout=30)
        if response.status_code != 200:
            logger.warning(f"    Failed to download {name}: HTTP {response.status_code}")
            return False
        parse_movingai_map(response.text, name)
    except requests.RequestException as e:
        logger.warning(f"    Error downloading {name}: {e}")
        return False
    except MapParseError as e:
        logger.warning(f"    {url} did not return a valid map: {e}")
        return False

    tmp_path = map_path + '.tmp'
    with open(tmp_path, 'w') as f:
        f.write(response.text)
    os.replace(tmp_path, map_path)
    return True


class MapDownloader:
    """Downloads benchmark maps, round-robin over mirror servers."""

    def __init__(self, output_dir: str = config.MAPS_DIRECTORY, force: bool = False):
        self.servers = config.MOVINGAI_SERVERS
        self.current_server = 0
        self.output_dir = output_dir
        self.force = force
        self.delay = config.MAP_DOWNLOAD_DELAY
        self.max_workers = config.MAX_DOWNLOAD_THREADS
        config.ensure_directories(self.output_dir)

    def get_next_server(self) -> str:
        server = self.servers[self.current_server]
        self.current_server = (self.current_server + 1) % len(self.servers)
        return server

    def missing(self, names: List[str]) -> List[str]:
        return [name for name in names
                if not os.path.exists(os.path.join(self.output_dir, f"{name}.map"))
                or os.path.getsize(os.path.join(self.output_dir, f"{name}.map")) == 0]

    def download_all(self, names: List[str]) -> bool:
        """
        Download every map in ``names`` that is not already present, or all
        of them when ``force`` is set.

        Returns:
            True if all maps are available afterwards
        """
        logger.info("=" * 60)
        logger.info(f"Downloading {len(names)} maps into {self.output_dir}")
        logger.info("=" * 60)

        remaining = list(names) if self.force else self.missing(names)
        if not remaining:
            logger.info("All maps already downloaded")
            return True
        logger.info(f"Need to download {len(remaining)} maps "
                    f"(skipping {len(names) - len(remaining)} existing)")

        downloaded = failed = 0
        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            future_to_name = {}
            for name in remaining:
                future = executor.submit(download_map, self.get_next_server(), name, self.output_dir, self.force)
                future_to_name[future] = name
                time.sleep(self.delay / self.max_workers)

            for future in as_completed(future_to_name):
                name = future_to_name[future]
                try:
                    if future.result():
                        downloaded += 1
                    else:
                        failed += 1
                except Exception as e:
                    logger.error(f"    Exception downloading {name}: {e}")
                    failed += 1
                logger.info(f"  Progress: {downloaded + failed}/{len(remaining)} - "
                            f"Downloaded: {downloaded}, Failed: {failed}")

        return failed == 0


def main(argv=None):
    """Main entry point; map names on the command line override the configured list."""
    parser = argparse.ArgumentParser(description='Download MovingAI benchmark maps')
    parser.add_argument('names', nargs='*', help='map names without .map (default: all configured maps)')
    parser.add_argument('--force', action='store_true',
                        help='re-fetch maps that already exist, replacing the shipped stand-ins')
    parser.add_argument('--output-dir', default=config.MAPS_DIRECTORY)
    args = parser.parse_args(argv)
    config.setup_logging()
    names = args.names or config.MOVINGAI_MAPS
    downloader = MapDownloader(args.output_dir, force=args.force)
    if downloader.download_all(names):
        logger.info("Map download completed successfully")
    else:
        logger.error("Map download completed with errors; see the log above")
        sys.exit(1)


if __name__ == "__main__":
    main()
