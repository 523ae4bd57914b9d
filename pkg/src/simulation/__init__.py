"""
シナリオシミュレータ（真値軌跡とセンサ観測の生成）
"""
